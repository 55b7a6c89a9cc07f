"""Desk-scale laboratory for pathology-aware GAN data augmentation."""

from .tensor import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
