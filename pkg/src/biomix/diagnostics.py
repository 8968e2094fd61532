"""Norms, moments and discrete residuals of the exact balance laws.

Three balance laws are tracked along a trajectory of

    d rho/dt + u . grad rho = kappa Lap rho + chi div(rho grad invLap rho) - eps rho^q

* mass:           d/dt int rho        = -eps int rho^q
* second moment:  d/dt int |x|^2 rho  = 2 int (x.u) rho + 4 kappa int rho
                                        - chi/(2 pi) (int rho)^2 - eps int |x|^2 rho^q
* L^q energy:     d/dt int rho^q      = -4 kappa (q-1)/q int |grad rho^{q/2}|^2
                                        + chi (q-1) int rho^{q+1} - q eps int rho^{2q-1}

The ``1/(2 pi)`` in the second-moment law comes from the free-space kernel
``grad invLap`` = ``x / (2 pi |x|^2)``: symmetrising
``int int x.(x-y)/|x-y|^2 rho(x) rho(y)`` gives ``(int rho)^2 / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from biomix.spectral import Field, Grid, fft2, gradient_arrays

INF = math.inf

#: Floor added to the residual denominator to avoid 0/0.
SCALE_FLOOR = 1e-30

#: Coefficient of ``chi (int rho)^2`` in the second-moment law.
DRIFT_SELF_COUPLING = 1.0 / (2.0 * math.pi)


def lp_norm(f: Field | np.ndarray, p: float, grid: Grid | None = None) -> float:
    """``(dx^2 sum |f|^p)^(1/p)``; the max norm for ``p = inf``."""
    if isinstance(f, Field):
        grid, v = f.grid, f.values
    else:
        v = f
    if not p >= 1:
        raise ValueError(f"lp_norm needs p >= 1 or inf, got {p}")
    a = np.abs(v)
    if p == INF:
        return float(a.max())
    if p == 1:
        return float(a.sum() * grid.cell_area)
    return float((np.sum(a**p) * grid.cell_area) ** (1.0 / p))


def centroid(f: Field) -> tuple[float, float]:
    X, Y = f.grid.coords
    m = f.values.sum()
    if not m > 0:
        raise ValueError("centroid of a field with non-positive mass")
    return float((f.values * X).sum() / m), float((f.values * Y).sum() / m)


def second_moment(f: Field) -> tuple[float, tuple[float, float]]:
    """Second moment about the centroid, which minimises it over all centers."""
    c = centroid(f)
    X, Y = f.grid.coords
    r2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2
    return float((r2 * f.values).sum() * f.grid.cell_area), c


def lp_exponents(q: int) -> tuple:
    return (1, 2, q, q + 1, 2 * q - 1, INF)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    m0: float
    m2: float
    centroid: tuple[float, float]
    lp: dict
    min_val: float
    species: dict | None = None
    integrals: dict = field(default_factory=dict, repr=False)

    @property
    def max_val(self) -> float:
        return self.lp[INF]


def balance_integrals(rho: np.ndarray, grid: Grid, q: int,
                      reference: tuple[float, float],
                      u: tuple[np.ndarray, np.ndarray] | None) -> dict:
    """Snapshot integrals entering the three balance laws."""
    dA = grid.cell_area
    X, Y = grid.coords
    dxr, dyr = X - reference[0], Y - reference[1]
    r2 = dxr**2 + dyr**2
    rho_q = rho**q
    pos = np.maximum(rho, 0.0)
    gx, gy = gradient_arrays(grid, fft2(rho))
    out = {
        "m0": float(rho.sum() * dA),
        "m2_ref": float((r2 * rho).sum() * dA),
        "x2_rho_q": float((r2 * rho_q).sum() * dA),
        "rho_q": float(rho_q.sum() * dA),
        # |grad rho^{q/2}|^2 = (q/2)^2 rho^{q-2} |grad rho|^2
        "grad_v_sq": float(((q / 2.0) ** 2 * pos ** (q - 2) * (gx * gx + gy * gy)).sum() * dA),
        "rho_q1": float((rho ** (q + 1)).sum() * dA),
        "rho_2q1": float((rho ** (2 * q - 1)).sum() * dA),
        "xu_rho": 0.0,
    }
    if u is not None:
        out["xu_rho"] = float(((dxr * u[0] + dyr * u[1]) * rho).sum() * dA)
    return out


def make_record(t: float, rho: Field, q: int, reference: tuple[float, float],
                u: tuple[np.ndarray, np.ndarray] | None = None,
                species: dict | None = None) -> DiagnosticsRecord:
    v = rho.values
    grid = rho.grid
    lp = {p: lp_norm(v, p, grid) for p in lp_exponents(q)}
    m0 = float(v.sum() * grid.cell_area)
    if m0 > 0:
        m2, c = second_moment(rho)
    else:
        m2, c = 0.0, (math.nan, math.nan)
    return DiagnosticsRecord(
        t=float(t), m0=m0, m2=m2, centroid=c, lp=lp, min_val=float(v.min()),
        species=species, integrals=balance_integrals(v, grid, q, reference, u),
    )


# -- residuals ----------------------------------------------------------------

@dataclass(frozen=True)
class ResidualSeries:
    """Per-interval residuals of the mass, second-moment and L^q laws.

    ``*_rel`` is ``|lhs - rhs| / (|lhs| + |rhs| + floor)``; ``*_abs`` is
    ``|lhs - rhs|``.  Entry i belongs to the interval between records i, i+1.
    """

    t_mid: np.ndarray
    mass_rel: np.ndarray
    mass_abs: np.ndarray
    moment_rel: np.ndarray
    moment_abs: np.ndarray
    lq_rel: np.ndarray
    lq_abs: np.ndarray

    def max_rel(self) -> dict:
        def m(a):
            return float(np.max(a)) if len(a) else 0.0
        return {"mass": m(self.mass_rel), "moment": m(self.moment_rel), "lq": m(self.lq_rel)}


def balance_rates(rec: DiagnosticsRecord, chi: float, eps: float, q: int,
                  kappa: float = 1.0) -> dict:
    """Analytic right-hand sides of the three balance laws at one record."""
    I = rec.integrals
    m0 = I["m0"]
    return {
        "mass": -eps * I["rho_q"],
        "moment": (2.0 * I["xu_rho"] + 4.0 * kappa * m0
                   - chi * DRIFT_SELF_COUPLING * m0 * m0 - eps * I["x2_rho_q"]),
        "lq": (-4.0 * kappa * (q - 1) / q * I["grad_v_sq"]
               + chi * (q - 1) * I["rho_q1"] - q * eps * I["rho_2q1"]),
    }


_LHS_KEY = {"mass": "m0", "moment": "m2_ref", "lq": "rho_q"}


def identity_residuals(records: list[DiagnosticsRecord], params) -> ResidualSeries:
    """Compare finite-difference rates of recorded quantities with the
    trapezoidal average of the analytic rates over each record interval."""
    if len(records) < 2:
        raise ValueError("identity_residuals needs at least two records")
    ts = np.array([r.t for r in records])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("record times must be strictly increasing")
    kappa = getattr(params, "kappa", 1.0)
    rates = [balance_rates(r, params.chi, params.eps, params.q, kappa) for r in records]
    h = np.diff(ts)
    out = {}
    for key, qkey in _LHS_KEY.items():
        Q = np.array([r.integrals[qkey] for r in records])
        R = np.array([x[key] for x in rates])
        lhs = np.diff(Q) / h
        rhs = 0.5 * (R[1:] + R[:-1])
        diff = np.abs(lhs - rhs)
        out[key + "_abs"] = diff
        out[key + "_rel"] = diff / (np.abs(lhs) + np.abs(rhs) + SCALE_FLOOR)
    return ResidualSeries(
        t_mid=0.5 * (ts[1:] + ts[:-1]),
        mass_rel=out["mass_rel"], mass_abs=out["mass_abs"],
        moment_rel=out["moment_rel"], moment_abs=out["moment_abs"],
        lq_rel=out["lq_rel"], lq_abs=out["lq_abs"],
    )


# -- explicit bounds ----------------------------------------------------------

def linf_ceiling(chi: float, eps: float, q: int, rho0_max: float) -> float:
    """Maximum-principle ceiling ``max((chi/eps)^(1/(q-2)), max rho0)``."""
    if chi == 0:
        return rho0_max
    if eps == 0:
        return INF
    return max((chi / eps) ** (1.0 / (q - 2)), rho0_max)


def moment_mass_bound(chi: float, m2: float, tau: float) -> float:
    """``(2/chi) (1 + sqrt(1 + chi m2 / (4 tau)))`` -- the L^1 bound at time tau
    that follows from the second-moment law with self-coupling ``chi``."""
    if chi <= 0:
        return INF
    if tau <= 0:
        return INF
    return 2.0 / chi * (1.0 + math.sqrt(1.0 + chi * m2 / (4.0 * tau)))


@dataclass(frozen=True)
class BoundCheck:
    name: str
    applicable: bool
    worst_margin: float = INF
    t_worst: float = math.nan
    passed: bool = True
    detail: str = ""


@dataclass(frozen=True)
class BoundsReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.applicable)

    def __getitem__(self, name: str) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.checks:
            if not c.applicable:
                lines.append(f"{c.name}: not applicable ({c.detail})")
                continue
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"{c.name}: {status} worst margin {c.worst_margin:.6e} "
                         f"at t={c.t_worst:.6g} {c.detail}".rstrip())
        return lines


@dataclass(frozen=True)
class InitialStats:
    m0: float
    m2: float
    linf: float
    l2: float

    @classmethod
    def of(cls, rho0: Field) -> InitialStats:
        m2, _ = second_moment(rho0)
        return cls(m0=lp_norm(rho0, 1), m2=m2, linf=lp_norm(rho0, INF), l2=lp_norm(rho0, 2))


def check_bounds(records: list[DiagnosticsRecord], params, rho0_stats: InitialStats,
                 ceiling_slack: float = 1e-6, moment_slack: float = 1e-8,
                 ratio_slack: float = 1e-10, self_coupling: float = DRIFT_SELF_COUPLING
                 ) -> BoundsReport:
    """Evaluate the L^inf ceiling, the second-moment L^1 bound and the
    norm-ratio monotonicity along ``records``.

    The L^1 bound uses the effective self-coupling ``chi * self_coupling``;
    pass ``self_coupling=1`` to evaluate the formula with bare ``chi``.
    """
    if not records:
        raise ValueError("check_bounds needs at least one record")
    chi, eps, q = params.chi, params.eps, params.q
    checks = []

    n0 = linf_ceiling(chi, eps, q, rho0_stats.linf)
    margins = [(n0 - r.max_val, r.t) for r in records]
    worst, tw = min(margins)
    checks.append(BoundCheck("linf_ceiling", True, worst, tw,
                             worst >= -ceiling_slack * n0, f"N0={n0:.6g}"))

    flow_zero = getattr(params.flow, "is_zero", True)
    if chi > 0 and flow_zero:
        c = chi * self_coupling
        items = []
        for r in records:
            if r.t > 0:
                b = moment_mass_bound(c, rho0_stats.m2, r.t)
                items.append((b - r.m0, r.t, b))
        if items:
            worst, tw, b = min(items)
            ok = all(m >= -moment_slack * bb for m, _, bb in items)
            checks.append(BoundCheck("moment_mass_bound", True, worst, tw, ok,
                                     f"bound={b:.6g} self_coupling={self_coupling:.6g}"))
        else:
            checks.append(BoundCheck("moment_mass_bound", False, detail="no record with t > 0"))
    else:
        checks.append(BoundCheck("moment_mass_bound", False,
                                 detail="needs chi > 0 and u = 0"))

    if chi == 0:
        worst, tw = INF, math.nan
        for p in (2, INF):
            ratios = [r.lp[p] / r.lp[1] for r in records]
            for i in range(1, len(ratios)):
                m = ratios[i - 1] * (1 + ratio_slack) - ratios[i]
                if m < worst:
                    worst, tw = m, records[i].t
        checks.append(BoundCheck("ratio_monotone", True, worst, tw, worst >= 0,
                                 "p in {2, inf}"))
    else:
        checks.append(BoundCheck("ratio_monotone", False, detail="needs chi = 0"))
    return BoundsReport(tuple(checks))
