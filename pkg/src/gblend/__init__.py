"""Two-stream sequence classifier trained with adaptive gradient blending."""

from .autodiff import Tape, Tensor

__all__ = ["Tape", "Tensor"]
__version__ = "0.1.0"
