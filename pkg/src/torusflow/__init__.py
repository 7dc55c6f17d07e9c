"""Moment-map flows of diffeomorphisms on flat tori T^2 and T^4."""

from .grid import TorusGrid, make_grid
from .maps import TangentField, TorusMap

__all__ = ["TorusGrid", "TangentField", "TorusMap", "make_grid"]
__version__ = "0.1.0"
