"""Zero-reference low-light image enhancement with joint denoising.

Pure numpy implementation with optional numba-accelerated convolution
kernels (see ``zerolight.kernels``).  The package trains small Retinex
decomposition networks directly on a folder of dark images, with no paired
or unpaired reference data, using masked sub-image pairs and frequency
priors as the only supervision signals.
"""

__version__ = "0.1.0"

from .tensor import Tensor, ShapeError, DomainError

__all__ = ["Tensor", "ShapeError", "DomainError", "__version__"]
