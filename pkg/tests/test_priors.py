"""DCT transforms, band masks, prior stack, encoder."""

import numpy as np
import pytest

import zerolight.tensor as T
from zerolight import networks, priors
from gradcheck import assert_grads_match


@pytest.fixture
def rng():
    return np.random.default_rng(31)


def dct2_reference(x):
    """Direct double-sum orthonormal DCT-II (the oracle)."""
    h, w = x.shape
    out = np.zeros((h, w))
    for u in range(h):
        for v in range(w):
            mu = 1 / np.sqrt(2) if u == 0 else 1.0
            mv = 1 / np.sqrt(2) if v == 0 else 1.0
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[i, j] \
                        * np.cos((2 * i + 1) * u * np.pi / (2 * h)) \
                        * np.cos((2 * j + 1) * v * np.pi / (2 * w))
            out[u, v] = (2 / np.sqrt(h * w)) * mu * mv * acc
    return out


def test_dct2_matches_double_sum(rng):
    x = rng.normal(size=(5, 7))
    assert np.abs(priors.dct2(x) - dct2_reference(x)).max() < 1e-12


def test_dct2_all_ones_concentrates_at_dc():
    f = priors.dct2(np.ones((4, 4)))
    assert abs(f[0, 0] - 4.0) < 1e-12
    f[0, 0] = 0.0
    assert np.abs(f).max() < 1e-12


def test_dct2_degenerate_one_by_one():
    assert np.allclose(priors.dct2(np.array([[0.7]])), [[0.7]])


def test_parseval(rng):
    x = rng.normal(size=(8, 8))
    assert abs(np.linalg.norm(priors.dct2(x)) - np.linalg.norm(x)) < 1e-10


def test_idct2_inverse_roundtrip(rng):
    x = rng.normal(size=(32, 32))
    assert np.abs(priors.idct2(priors.dct2(x)) - x).max() < 1e-9


def test_idct2_dc_delta_gives_constant():
    h, w = 6, 4
    f = np.zeros((h, w))
    f[0, 0] = np.sqrt(h * w)
    assert np.abs(priors.idct2(f) - 1.0).max() < 1e-12


def test_idct2_linearity(rng):
    f1 = rng.normal(size=(8, 8))
    f2 = rng.normal(size=(8, 8))
    lhs = priors.idct2(2.5 * f1 - 1.5 * f2)
    rhs = 2.5 * priors.idct2(f1) - 1.5 * priors.idct2(f2)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_band_masks_small_case():
    low1, low2, high1, high2 = priors.band_masks(8, 8, 1)
    assert low1.sum() == 3  # (0,0), (0,1), (1,0)
    assert set(np.unique(low1)) <= {0.0, 1.0}
    diag = np.add.outer(np.arange(8), np.arange(8))
    assert np.array_equal(low2, (diag <= 3).astype(float))
    assert np.array_equal(high1, ((diag > 2) & (diag <= 4)).astype(float))
    assert np.array_equal(high2, (diag >= 5).astype(float))


def test_band_masks_subset_and_disjoint():
    for t in (1, 2, 3):
        low1, low2, _, high2 = priors.band_masks(32, 32, t)
        assert np.all(low2 >= low1)          # low1 subset of low2
        assert not np.any(low1 * high2)      # low1 disjoint from high2


def test_band_masks_validation():
    with pytest.raises(ValueError):
        priors.band_masks(8, 8, 0)
    with pytest.raises(ValueError):
        priors.band_masks(8, 8, 3)  # 15 > 8+8-2 = 14
    priors.band_masks(8, 8, 2)  # 10 <= 14: fine


def test_default_bandwidth_rule():
    assert priors.default_bandwidth(64, 64) == 8
    assert priors.default_bandwidth(256, 256) == 32
    assert priors.default_bandwidth(8, 8) == 1
    h = w = 16
    t = priors.default_bandwidth(h, w)
    assert 5 * t <= h + w - 2 and t >= 1


def test_apply_band_identity_zero_and_complement(rng):
    img = rng.uniform(0, 1, (8, 8, 3))
    ones = np.ones((8, 8))
    assert np.abs(priors.apply_band(img, ones) - img).max() < 1e-9
    assert np.abs(priors.apply_band(img, np.zeros((8, 8)))).max() == 0.0
    m = priors.band_masks(8, 8, 1)[0]
    rec = priors.apply_band(img, m) + priors.apply_band(img, 1 - m)
    assert np.abs(rec - img).max() < 1e-9


def test_low_band_output_is_band_limited(rng):
    """Filtering through M_low1 leaves zero energy outside the band."""
    img = rng.uniform(0, 1, (16, 16, 3))
    low1 = priors.band_masks(16, 16, 2)[0]
    filtered = priors.apply_band(img, low1)
    for c in range(3):
        spectrum = priors.dct2(filtered[:, :, c])
        assert np.abs(spectrum * (1 - low1)).max() < 1e-9


def test_energy_split_over_disjoint_partition(rng):
    img = rng.normal(size=(12, 12))
    diag = np.add.outer(np.arange(12), np.arange(12))
    parts = [(diag <= 3).astype(float),
             ((diag > 3) & (diag <= 8)).astype(float),
             (diag > 8).astype(float)]
    total = np.linalg.norm(img) ** 2
    split = sum(np.linalg.norm(priors.dct2(img) * m) ** 2 for m in parts)
    assert abs(total - split) < 1e-9


def test_illumination_prior_values(rng):
    img = np.zeros((2, 2, 3))
    img[0, 0] = [0.2, 0.4, 0.6]
    i_lu = priors.illumination_prior(img)
    assert i_lu.shape == (2, 2, 1)
    assert np.isclose(i_lu[0, 0, 0], 0.4)
    gray = rng.uniform(0, 1, (4, 4, 1)).repeat(3, axis=2)
    assert np.allclose(priors.illumination_prior(gray)[:, :, 0], gray[:, :, 0])
    arb = rng.uniform(0, 1, (5, 5, 3))
    lu = priors.illumination_prior(arb)[:, :, 0]
    assert np.all(lu >= arb.min(axis=2)) and np.all(lu <= arb.max(axis=2))


def test_prior_stack_shapes_and_bandwidth(rng):
    img = rng.uniform(0, 1, (16, 16, 3))
    stack = priors.prior_stack(img)
    assert stack.t == priors.default_bandwidth(16, 16)
    assert stack.i_lu.shape == (16, 16, 1)
    for m in (stack.c_low1, stack.c_low2, stack.c_high1, stack.c_high2):
        assert m.shape == (16, 16, 3)
    assert stack.channels().shape == (1, 13, 16, 16)


def test_encoder_shape_and_zero_preservation(rng):
    cfg = networks.ArchConfig(prior_channels=6)
    params = networks.init_params(cfg, rng)
    zero_stack = priors.PriorStack(
        i_lu=np.zeros((8, 8, 1)), c_low1=np.zeros((8, 8, 3)),
        c_low2=np.zeros((8, 8, 3)), c_high1=np.zeros((8, 8, 3)),
        c_high2=np.zeros((8, 8, 3)), t=1)
    p = priors.encode_priors(zero_stack, params["encoder.w1"],
                             params["encoder.b1"], params["encoder.w2"],
                             params["encoder.b2"])
    assert p.shape == (1, 6, 8, 8)
    assert np.abs(p.data).max() == 0.0  # zero input, zero bias -> exactly zero


def test_encoder_gradcheck(rng):
    cfg = networks.ArchConfig(prior_channels=4)
    params = networks.init_params(cfg, rng)
    img = rng.uniform(0, 1, (8, 8, 3))
    stack = priors.prior_stack(img, t=1)
    enc = {k: params[k] for k in
           ("encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2")}

    def f():
        p = priors.encode_priors(stack, enc["encoder.w1"], enc["encoder.b1"],
                                 enc["encoder.w2"], enc["encoder.b2"])
        return T.reduce_mean(T.mul(p, p))

    worst = assert_grads_match(f, enc, rng, samples_per_tensor=5, tol=1e-5)
    assert worst < 1e-5


def test_prior_determinism(rng):
    img = rng.uniform(0, 1, (12, 12, 3))
    a = priors.prior_stack(img, t=2)
    b = priors.prior_stack(img, t=2)
    assert np.array_equal(a.channels(), b.channels())
