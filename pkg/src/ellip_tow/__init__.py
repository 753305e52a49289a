"""Ellipsoid mean values, the scale-eps fixed-point problem and the noisy tug-of-war game."""
from __future__ import annotations

__version__ = "0.1.0"
