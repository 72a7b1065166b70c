"""Numerical study of conservative four-dimensional flows near homoclinic loops to a saddle."""
from __future__ import annotations

__version__ = "0.1.0"
