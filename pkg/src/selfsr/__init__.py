"""Self-supervised single-image super-resolution with a cycle-consistent GAN."""

from .config import RunConfig
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["RunConfig", "Tensor", "no_grad", "__version__"]
