"""Unpaired low-light image enhancement with edge- and attention-guided GANs."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, no_grad, grad_check  # noqa: F401
