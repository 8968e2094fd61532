"""Pseudo-spectral simulator for chemotaxis with absorbing reaction in 2D."""

from biomix.spectral import (
    ContainmentError,
    Field,
    Grid,
    VectorField,
    gaussian,
    grad_inv_laplacian,
    gradient,
    heat_propagate,
    integrate,
    laplacian,
    make_grid,
)

__version__ = "0.1.0"

__all__ = [
    "ContainmentError",
    "Field",
    "Grid",
    "VectorField",
    "gaussian",
    "grad_inv_laplacian",
    "gradient",
    "heat_propagate",
    "integrate",
    "laplacian",
    "make_grid",
]
