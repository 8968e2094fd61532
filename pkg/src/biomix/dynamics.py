"""Integrating-factor Heun time stepping for the single-density model and
the two-species reacting system.

Diffusion is applied exactly in Fourier space; advection, chemotaxis and
reaction are explicit and 2/3-dealiased.  The chemotaxis divergence is
expanded as ``grad rho . grad invLap rho + rho^2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from biomix import diagnostics
from biomix.flows import FlowSpec, flow_arrays
from biomix.spectral import (
    CONTAINMENT_TOL,
    ContainmentError,
    Field,
    Grid,
    containment_fraction,
    drift_arrays,
    fft2,
    gradient_arrays,
    ifft2,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelParams:
    chi: float = 0.0
    eps: float = 1.0
    q: int = 3
    flow: FlowSpec = field(default_factory=FlowSpec)
    kappa: float = 1.0

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 3:
            raise ValueError("q must be an integer >= 3")
        if not (self.chi >= 0 and self.eps >= 0):
            raise ValueError("chi and eps must be >= 0")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        object.__setattr__(self, "q", int(self.q))


@dataclass(frozen=True)
class SystemParams:
    eps: float = 1.0
    q: int = 4
    kappa1: float = 1.0
    kappa2: float = 0.5
    flow: FlowSpec = field(default_factory=FlowSpec)

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 4 or self.q % 2:
            raise ValueError("system q must be an even integer >= 4")
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError("kappa1 and kappa2 must be > 0")
        if not self.eps >= 0:
            raise ValueError("eps must be >= 0")
        object.__setattr__(self, "q", int(self.q))


@dataclass(frozen=True)
class StepControl:
    """Time-step limits and run guards."""

    dt_max: float = 1e-2
    cfl: float = 0.4
    rxn: float = 0.2
    steady_tol: float = 1e-8
    steady_steps: int = 100
    neg_tol: float = 1e-6
    blowup_factor: float = 1e3
    containment_tol: float = CONTAINMENT_TOL
    guard_div: float = 1e-30
    # end the run (instead of aborting) once the density reaches the boundary strip
    stop_on_containment: bool = False


@dataclass(frozen=True)
class State:
    t: float
    rho: Field


@dataclass(frozen=True)
class SystemState:
    t: float
    s: Field
    e: Field


class SimulationError(RuntimeError):
    """A run was aborted; ``t`` is the time of failure."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


class BlowUpError(SimulationError):
    pass


class NegativityError(SimulationError):
    pass


class ContainmentAbort(SimulationError):
    pass


# -- right-hand sides ---------------------------------------------------------

class _SingleRHS:
    """Explicit terms of the single-density equation on one grid."""

    def __init__(self, grid: Grid, params: ModelParams, control: StepControl):
        self.grid = grid
        self.params = params
        self.control = control
        self.ncomp = 1
        self.kappas = (params.kappa,)

    def __call__(self, specs, t):
        (rho_hat,) = specs
        g, p = self.grid, self.params
        n = g.n
        mask = g.dealias_mask
        rf_hat = rho_hat * mask
        rf = ifft2(rf_hat, n)
        out = np.zeros((n, n))
        speed = np.zeros((n, n))
        u = flow_arrays(p.flow, g, t)
        if u is not None or p.chi > 0:
            gx, gy = gradient_arrays(g, rf_hat)
        if u is not None:
            out -= u[0] * gx + u[1] * gy
            speed += np.hypot(u[0], u[1])
        if p.chi > 0:
            frac = containment_fraction(g, rf)
            if frac > self.control.containment_tol:
                raise ContainmentError(frac, self.control.containment_tol)
            Gx, Gy = drift_arrays(g, rf)
            out += p.chi * (gx * Gx + gy * Gy + rf * rf)
            speed += p.chi * np.hypot(Gx, Gy)
        if p.eps > 0:
            out -= p.eps * rf**p.q
        out_hat = fft2(out) * mask
        rmax = float(rf.max())
        rate = p.eps * max(rmax, 0.0) ** (p.q - 1)
        return (out_hat,), float(speed.max()), rate


class _SystemRHS:
    def __init__(self, grid: Grid, params: SystemParams, control: StepControl):
        self.grid = grid
        self.params = params
        self.control = control
        self.ncomp = 2
        self.kappas = (params.kappa1, params.kappa2)

    def __call__(self, specs, t):
        g, p = self.grid, self.params
        n = g.n
        mask = g.dealias_mask
        u = flow_arrays(p.flow, g, t)
        outs = []
        phys = []
        for h in specs:
            fh = h * mask
            phys.append((fh, ifft2(fh, n)))
        react = p.eps * (phys[0][1] * phys[1][1]) ** (p.q // 2) if p.eps > 0 else None
        speed = 0.0
        for fh, f in phys:
            out = np.zeros((n, n))
            if u is not None:
                gx, gy = gradient_arrays(g, fh)
                out -= u[0] * gx + u[1] * gy
            if react is not None:
                out -= react
            outs.append(fft2(out) * mask)
        if u is not None:
            speed = float(np.hypot(u[0], u[1]).max())
        rate = 0.0
        if p.eps > 0:
            smax = max(float(phys[0][1].max()), 0.0)
            emax = max(float(phys[1][1].max()), 0.0)
            # d/ds of eps (se)^{q/2} bounds the stiffness of either species
            m = max(smax, emax)
            rate = p.eps * (p.q / 2) * m ** (p.q - 1)
        return tuple(outs), speed, rate


def _timestep(grid: Grid, control: StepControl, speed: float, rate: float) -> float:
    cands = [control.dt_max]
    if speed > 0:
        cands.append(control.cfl * grid.dx / speed)
    if rate > 0:
        cands.append(control.rxn / (rate + control.guard_div))
    return min(cands)


def _heun(rhs, specs, t, dt, first=None):
    """One integrating-factor Heun step; ``first`` reuses a stage-1 evaluation."""
    g = rhs.grid
    E = [np.exp(-k * dt * g.k2) for k in rhs.kappas]
    N0 = first if first is not None else rhs(specs, t)[0]
    pred = tuple(e * (s + dt * a) for e, s, a in zip(E, specs, N0))
    N1, _, _ = rhs(pred, t + dt)
    return tuple(e * (s + 0.5 * dt * a) + 0.5 * dt * b for e, s, a, b in zip(E, specs, N0, N1))


# -- public single-step API ---------------------------------------------------

def explicit_rhs(state: State, params: ModelParams, control: StepControl | None = None) -> Field:
    control = control or StepControl()
    rhs = _SingleRHS(state.rho.grid, params, control)
    (out,), _, _ = rhs((fft2(state.rho.values),), state.t)
    return Field(state.rho.grid, ifft2(out, state.rho.grid.n))


def stable_dt(state: State, params: ModelParams, control: StepControl | None = None) -> float:
    control = control or StepControl()
    rhs = _SingleRHS(state.rho.grid, params, control)
    _, speed, rate = rhs((fft2(state.rho.values),), state.t)
    return _timestep(state.rho.grid, control, speed, rate)


def step(state: State, params: ModelParams, dt: float,
         control: StepControl | None = None) -> State:
    control = control or StepControl()
    g = state.rho.grid
    rhs = _SingleRHS(g, params, control)
    try:
        (new,) = _heun(rhs, (fft2(state.rho.values),), state.t, dt)
    except ContainmentError as exc:
        raise ContainmentAbort(str(exc), state.t) from exc
    rho = ifft2(new, g.n)
    t = state.t + dt
    _guard_single(rho, params, control, diagnostics.linf_ceiling(
        params.chi, params.eps, params.q, float(np.abs(state.rho.values).max())), t)
    return State(t, Field(g, rho))


def step_system(state: SystemState, params: SystemParams, dt: float,
                control: StepControl | None = None) -> SystemState:
    control = control or StepControl()
    g = state.s.grid
    rhs = _SystemRHS(g, params, control)
    s, e = _heun(rhs, (fft2(state.s.values), fft2(state.e.values)), state.t, dt)
    return SystemState(state.t + dt, Field(g, ifft2(s, g.n)), Field(g, ifft2(e, g.n)))


def _guard_single(rho: np.ndarray, params: ModelParams, control: StepControl,
                  n0: float, t: float) -> None:
    if not np.all(np.isfinite(rho)):
        raise BlowUpError("numerical blow-up: non-finite values", t)
    rmax = float(rho.max())
    if math.isfinite(n0) and rmax > control.blowup_factor * n0:
        raise BlowUpError(f"numerical blow-up: max rho {rmax:.3e} exceeds "
                          f"{control.blowup_factor:g} x N0 = {n0:.3e}", t)
    rmin = float(rho.min())
    if rmin < -control.neg_tol * rmax:
        raise NegativityError(f"negativity {rmin:.3e} below -{control.neg_tol:g} x max; "
                              "grid is under-resolving the solution", t)


# -- runs ---------------------------------------------------------------------

@dataclass
class RunResult:
    """Outcome of a run.  ``stop_reason`` is ``t_end``, ``steady`` or ``containment``."""

    records: list
    state: object
    steps: int = 0
    stopped_early: bool = False
    dts: list = field(default_factory=list, repr=False)
    stop_reason: str = "t_end"


def _advance(rhs, specs, t0, t_end, record_every, control, on_step, on_record,
             mass_of):
    """Shared adaptive loop.  Records are taken at multiples of ``record_every``.

    ``on_step`` returns True when the new state has left the contained
    region; with ``control.stop_on_containment`` that ends the loop.
    """
    steps = 0
    t = t0
    k = 1
    m_init = mass_of(specs)
    quiet = 0
    dts = []
    reason = "t_end"
    eps_t = 1e-12 * max(record_every, 1e-300)
    last_rec = t0
    while t < t_end - eps_t:
        try:
            N0, speed, rate = rhs(specs, t)
            dt = _timestep(rhs.grid, control, speed, rate)
            t_rec = min(t0 + k * record_every, t_end)
            hit = False
            if t + dt >= t_rec - eps_t:
                dt = t_rec - t
                hit = True
            new = _heun(rhs, specs, t, dt, first=N0)
        except ContainmentError:
            if not control.stop_on_containment:
                raise
            reason = "containment"
            break
        m_old = mass_of(specs)
        specs = new
        steps += 1
        t = t_rec if hit else t + dt
        dts.append(dt)
        if on_step(specs, t):
            reason = "containment"
            break
        m_new = mass_of(specs)
        if abs(m_new - m_old) / dt < control.steady_tol * abs(m_init):
            quiet += 1
        else:
            quiet = 0
        if hit:
            on_record(specs, t)
            last_rec = t
            k += 1
        if quiet >= control.steady_steps:
            reason = "steady"
            break
    if reason != "t_end" and last_rec != t:
        on_record(specs, t)
    return specs, t, steps, reason, dts


def run(initial: State, params: ModelParams, t_end: float, record_every: float,
        control: StepControl | None = None,
        on_record: Callable[[State], None] | None = None) -> RunResult:
    """Integrate the single-density model, recording diagnostics.

    Stops at ``t_end`` or once ``|dm0/dt| < steady_tol * m0(0)`` for
    ``steady_steps`` consecutive steps.
    """
    control = control or StepControl()
    if record_every <= 0:
        raise ValueError("record_every must be > 0")
    g = initial.rho.grid
    rho0 = initial.rho
    ref = diagnostics.centroid(rho0) if rho0.values.sum() > 0 else g.center
    n0 = diagnostics.linf_ceiling(params.chi, params.eps, params.q,
                                  float(np.abs(rho0.values).max()))
    rhs = _SingleRHS(g, params, control)
    records = []

    def record(rho_arr, t):
        f = Field(g, rho_arr)
        records.append(diagnostics.make_record(t, f, params.q, ref, flow_arrays(params.flow, g, t)))
        if on_record is not None:
            on_record(State(t, f))

    def on_step(specs, t):
        rho = ifft2(specs[0], g.n)
        _guard_single(rho, params, control, n0, t)
        frac = containment_fraction(g, rho)
        if frac > control.containment_tol:
            if control.stop_on_containment:
                return True
            raise ContainmentAbort(str(ContainmentError(frac, control.containment_tol)), t)
        return False

    def on_rec(specs, t):
        record(ifft2(specs[0], g.n), t)

    record(rho0.values, initial.t)
    try:
        specs, t, steps, reason, dts = _advance(
            rhs, (fft2(rho0.values),), initial.t, t_end, record_every, control,
            on_step, on_rec, lambda s: float(s[0][0, 0].real))
    except ContainmentError as exc:
        t_fail = records[-1].t if records else initial.t
        raise ContainmentAbort(str(exc) + " after last record", t_fail) from exc
    if steps == 0:
        return RunResult(records, initial, 0, reason != "t_end", [], reason)
    final = State(t, Field(g, ifft2(specs[0], g.n)))
    return RunResult(records, final, steps, reason != "t_end", dts, reason)


def run_two_species(initial: SystemState, params: SystemParams, t_end: float,
                    record_every: float, control: StepControl | None = None,
                    on_record: Callable[[SystemState], None] | None = None) -> RunResult:
    control = control or StepControl()
    if record_every <= 0:
        raise ValueError("record_every must be > 0")
    for name in ("s", "e"):
        if getattr(initial, name).values.min() < 0:
            raise ValueError(f"initial {name} must be non-negative")
    g = initial.s.grid
    rhs = _SystemRHS(g, params, control)
    total0 = initial.s.values.sum() + initial.e.values.sum()
    ref = (diagnostics.centroid(Field(g, initial.s.values + initial.e.values))
           if total0 > 0 else g.center)
    records = []
    n0 = max(float(initial.s.values.max()), float(initial.e.values.max()))

    def record(s, e, t):
        fs, fe = Field(g, s), Field(g, e)
        dA = g.cell_area
        species = {"s": float(s.sum() * dA), "e": float(e.sum() * dA),
                   "s_min": float(s.min()), "e_min": float(e.min()),
                   "e_max": float(e.max())}
        records.append(diagnostics.make_record(t, fs, params.q, ref,
                                               flow_arrays(params.flow, g, t), species))
        if on_record is not None:
            on_record(SystemState(t, fs, fe))

    def on_step(specs, t):
        for h in specs:
            a = ifft2(h, g.n)
            if not np.all(np.isfinite(a)):
                raise BlowUpError("numerical blow-up: non-finite values", t)
            amax = float(a.max())
            if amax > control.blowup_factor * n0:
                raise BlowUpError("numerical blow-up in two-species run", t)
            if a.min() < -control.neg_tol * amax:
                raise NegativityError("negativity in two-species run", t)
            frac = containment_fraction(g, a)
            if frac > control.containment_tol:
                if control.stop_on_containment:
                    return True
                raise ContainmentAbort(str(ContainmentError(frac, control.containment_tol)), t)
        return False

    def on_rec(specs, t):
        record(ifft2(specs[0], g.n), ifft2(specs[1], g.n), t)

    record(initial.s.values, initial.e.values, initial.t)
    specs, t, steps, reason, dts = _advance(
        rhs, (fft2(initial.s.values), fft2(initial.e.values)), initial.t, t_end,
        record_every, control, on_step, on_rec,
        lambda s: float(s[0][0, 0].real + s[1][0, 0].real))
    if steps == 0:
        return RunResult(records, initial, 0, reason != "t_end", [], reason)
    final = SystemState(t, Field(g, ifft2(specs[0], g.n)), Field(g, ifft2(specs[1], g.n)))
    return RunResult(records, final, steps, reason != "t_end", dts, reason)


def with_chi(params: ModelParams, chi: float) -> ModelParams:
    return replace(params, chi=chi)
