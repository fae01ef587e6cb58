"""Locality-enhanced visual projectors, instruction-data tooling and a toy MLLM harness."""

from .tensor import Tensor, no_grad

__version__ = "0.1.0"
__all__ = ["Tensor", "no_grad", "__version__"]
