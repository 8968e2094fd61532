"""Prescribed incompressible velocity fields built from stream functions.

``u = (-d psi/dy, d psi/dx)`` is evaluated analytically, so the spectral
divergence of the samples vanishes to rounding for every kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from biomix.spectral import Grid, VectorField

FLOW_KINDS = ("zero", "cellular", "shear")


@dataclass(frozen=True)
class FlowSpec:
    """Stream-function flow description.

    kind: ``zero``, ``cellular`` or ``shear``.
    amplitude: peak speed A (the sup norm of ``u`` at ``t = 0``).
    cells: number of cells per box side (cellular only).
    omega: time frequency of the cellular modulation ``cos(omega t)``.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    cells: int = 1
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}; expected one of {FLOW_KINDS}")
        if not self.amplitude >= 0:
            raise ValueError("flow amplitude must be >= 0")
        if int(self.cells) != self.cells or self.cells < 1:
            raise ValueError("flow cells must be an integer >= 1")
        if not self.omega >= 0:
            raise ValueError("flow omega must be >= 0")
        object.__setattr__(self, "cells", int(self.cells))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0.0

    @property
    def sup_norm(self) -> float:
        """Upper bound on ``|u|`` over space and time (attained at t = 0)."""
        return 0.0 if self.is_zero else self.amplitude


def flow_arrays(spec: FlowSpec, grid: Grid, t: float) -> tuple[np.ndarray, np.ndarray] | None:
    """Velocity components as (n, n) arrays, or ``None`` for a vanishing flow."""
    if spec.is_zero:
        return None
    L = grid.box_size
    X, Y = grid.coords
    A = spec.amplitude
    if spec.kind == "cellular":
        a = 2.0 * np.pi * spec.cells / L
        c = np.cos(spec.omega * t)
        # psi = (A / a) sin(a x) sin(a y) cos(omega t)
        ux = -A * c * np.sin(a * X) * np.cos(a * Y)
        uy = A * c * np.cos(a * X) * np.sin(a * Y)
        return ux, uy
    # shear: psi = (A L / 2 pi) cos(2 pi y / L)
    b = 2.0 * np.pi / L
    ux = A * np.sin(b * Y) * np.ones_like(X)
    uy = np.zeros((grid.n, grid.n))
    return ux, uy


def sample_flow(spec: FlowSpec, grid: Grid, t: float = 0.0) -> VectorField:
    u = flow_arrays(spec, grid, t)
    if u is None:
        z = np.zeros((grid.n, grid.n))
        return VectorField(grid, z, z)
    return VectorField(grid, *u)
