"""Panoptic fusion and evaluation toolkit with occlusion-aware ranking."""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
