"""Numerical experiments on equidistribution of periodic points and preimages."""
from __future__ import annotations

__version__ = "0.1.0"
