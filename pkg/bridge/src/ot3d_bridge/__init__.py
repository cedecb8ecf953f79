"""Adapter between raw RGB-D captures, 2D perception models, and the
scene-bundle / classifier wire formats of the geometric pipeline."""

__version__ = "0.1.0"

from .extract import extract
from .serve import classify_serve
from .affordance import affordance_nouns

__all__ = ["extract", "classify_serve", "affordance_nouns", "__version__"]
