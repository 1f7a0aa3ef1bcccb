"""Open-world multimodal continual learning on synthetic streams."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
