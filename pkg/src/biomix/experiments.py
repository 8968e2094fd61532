"""Scenario drivers: parameter sweeps, power-law fits, decay rates, the
comparison check, the two-species run and Gagliardo-Nirenberg ratios.

A ``Scenario`` bundles grid, model, initial Gaussians and run controls.
Every sweep is a deterministic fold over its parameter list.

"Long-time" values are taken at the end of the run: the early-stop steady
state, the horizon ``t_end``, or (with ``stop_on_containment``) the first
time the density reaches the boundary strip.  Masses decrease
monotonically, so each of these upper-bounds the true limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import groupby

import numpy as np

from biomix import diagnostics
from biomix.diagnostics import INF, BoundsReport, InitialStats, lp_norm
from biomix.dynamics import (
    ModelParams,
    RunResult,
    State,
    StepControl,
    SystemParams,
    SystemState,
    run,
    run_two_species,
    stable_dt,
    step,
)
from biomix.spectral import Field, Grid, check_containment, gaussian, gradient, make_grid

# -- power laws -----------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawFit:
    """``y ~ prefactor * x ** exponent`` fitted in log-log space."""

    exponent: float
    prefactor: float
    rms_residual: float
    count: int

    def __call__(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent


def fit_power_law(xs, ys) -> PowerLawFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D sequences of equal length")
    if len(x) < 3:
        raise ValueError("a power-law fit needs at least 3 points")
    if not (np.all(x > 0) and np.all(y > 0)):
        raise ValueError("power-law fit needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    res = ly - (slope * lx + icpt)
    return PowerLawFit(float(slope), float(math.exp(icpt)),
                       float(np.sqrt(np.mean(res**2))), len(x))


# -- scenarios ------------------------------------------------------------------


@dataclass(frozen=True)
class Blob:
    """Gaussian initial bump; ``center=None`` means the middle of the box."""

    mass: float
    sigma: float = 1.0
    center: tuple[float, float] | None = None

    def sample(self, grid: Grid) -> Field:
        return gaussian(grid, self.mass, self.center, self.sigma)


def _superpose(grid: Grid, blobs) -> Field:
    v = np.zeros((grid.n, grid.n))
    for b in blobs:
        v = v + b.sample(grid).values
    return Field(grid, v)


@dataclass(frozen=True)
class Scenario:
    """Single-density run description."""

    n: int = 256
    box_size: float = 20.0
    params: ModelParams = field(default_factory=ModelParams)
    blobs: tuple = (Blob(1.0),)
    t_end: float = 1.0
    record_every: float = 0.01
    control: StepControl = field(default_factory=StepControl)

    @property
    def grid(self) -> Grid:
        return make_grid(self.n, self.box_size)

    def initial(self) -> Field:
        return _superpose(self.grid, self.blobs)

    def with_params(self, **kw) -> Scenario:
        return replace(self, params=replace(self.params, **kw))

    def with_control(self, **kw) -> Scenario:
        return replace(self, control=replace(self.control, **kw))


@dataclass(frozen=True)
class SystemScenario:
    """Two-species run description."""

    n: int = 256
    box_size: float = 20.0
    params: SystemParams = field(default_factory=SystemParams)
    s_blobs: tuple = (Blob(1.0),)
    e_blobs: tuple = (Blob(0.7),)
    t_end: float = 1.0
    record_every: float = 0.01
    control: StepControl = field(default_factory=StepControl)

    @property
    def grid(self) -> Grid:
        return make_grid(self.n, self.box_size)


@dataclass
class Trajectory:
    """A finished single-density run with its bound checks."""

    scenario: Scenario
    result: RunResult
    rho0: InitialStats
    bounds: BoundsReport
    literal_bounds: BoundsReport

    @property
    def records(self):
        return self.result.records

    @property
    def final_mass(self) -> float:
        return self.result.records[-1].m0

    @property
    def final_time(self) -> float:
        return self.result.records[-1].t


def simulate(sc: Scenario, t_end: float | None = None) -> Trajectory:
    rho0 = sc.initial()
    res = run(State(0.0, rho0), sc.params, sc.t_end if t_end is None else t_end,
              sc.record_every, sc.control)
    stats = InitialStats.of(rho0)
    return Trajectory(
        sc, res, stats,
        diagnostics.check_bounds(res.records, sc.params, stats),
        diagnostics.check_bounds(res.records, sc.params, stats, self_coupling=1.0),
    )


def mass_nonincreasing(records, slack: float = 1e-12) -> bool:
    m = [r.m0 for r in records]
    return all(b <= a * (1 + slack) + slack for a, b in zip(m, m[1:]))


# -- sweeps ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    value: float
    m0_initial: float
    m0_final: float
    t_final: float
    stop_reason: str
    max_val: float
    bounds: BoundsReport
    literal_bounds: BoundsReport
    mass_monotone: bool
    records: tuple = field(repr=False, default=())


@dataclass(frozen=True)
class SweepReport:
    variable: str
    quantity: str
    points: tuple
    fit: PowerLawFit

    @property
    def xs(self):
        return [p.value for p in self.points]


def _point(value: float, tr: Trajectory) -> SweepPoint:
    return SweepPoint(
        value=value, m0_initial=tr.records[0].m0, m0_final=tr.final_mass,
        t_final=tr.final_time, stop_reason=tr.result.stop_reason,
        max_val=max(r.max_val for r in tr.records), bounds=tr.bounds,
        literal_bounds=tr.literal_bounds, mass_monotone=mass_nonincreasing(tr.records),
        records=tuple(tr.records),
    )


def epsilon_linearity(base: Scenario, eps_list) -> SweepReport:
    """Fit the mass deficit ``m0(0) - m0(end)`` against eps (chi = 0)."""
    if base.params.chi != 0:
        raise ValueError("epsilon_linearity needs chi = 0")
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be > 0 (the deficit at eps = 0 is zero)")
    pts = tuple(_point(e, simulate(base.with_params(eps=e))) for e in eps_list)
    fit = fit_power_law([p.value for p in pts], [p.m0_initial - p.m0_final for p in pts])
    return SweepReport("eps", "deficit", pts, fit)


def chi_scaling(base: Scenario, chi_list) -> SweepReport:
    """Fit the long-time mass against chi (u = 0)."""
    p = base.params
    if not p.flow.is_zero:
        raise ValueError("chi_scaling needs u = 0")
    rho_max = float(base.initial().values.max())
    cmin = min(chi_list)
    if rho_max > (cmin / p.eps) ** (1.0 / (p.q - 2)):
        raise ValueError("initial max exceeds (chi_min/eps)^(1/(q-2)); data is not small")
    pts = tuple(_point(c, simulate(base.with_params(chi=c))) for c in chi_list)
    fit = fit_power_law([q.value for q in pts], [q.m0_final for q in pts])
    return SweepReport("chi", "m0_final", pts, fit)


@dataclass(frozen=True)
class FlowChiReport:
    samples: tuple            # (chi, tau, m0)
    fit: PowerLawFit          # m0 against chi * tau
    c_fit: float              # smallest C with m0 <= C (chi tau)^(-1/2) on every sample
    collapse_factor: float    # worst max/min of m0 over samples sharing chi * tau
    points: tuple = ()

    @property
    def covered(self) -> bool:
        return all(m <= self.c_fit * (c * t) ** -0.5 * (1 + 1e-12) for c, t, m in self.samples)


def tau_window(chi: float, tau_grid) -> list[float]:
    hi = chi ** (1.0 / 3.0)
    return [t for t in tau_grid if 0 < t <= hi * (1 + 1e-12)]


def flow_chi_scaling(base: Scenario, chi_list, tau_grid) -> FlowChiReport:
    if base.params.flow.is_zero:
        raise ValueError("flow_chi_scaling needs a non-zero flow")
    samples = []
    pts = []
    for chi in chi_list:
        taus = tau_window(chi, tau_grid)
        if not taus:
            continue
        tr = simulate(base.with_params(chi=chi), t_end=max(taus))
        pts.append(_point(chi, tr))
        by_t = {round(r.t, 9): r.m0 for r in tr.records}
        for tau in taus:
            key = round(tau, 9)
            if key in by_t:
                samples.append((float(chi), float(tau), by_t[key]))
    if len(samples) < 3:
        raise ValueError("flow_chi_scaling needs at least 3 (chi, tau) samples")
    x = [c * t for c, t, _ in samples]
    fit = fit_power_law(x, [m for _, _, m in samples])
    c_fit = max(m * math.sqrt(c * t) for c, t, m in samples)
    worst = 1.0
    keyed = sorted(((round(c * t, 9), m) for c, t, m in samples))
    for _, grp in groupby(keyed, key=lambda z: z[0]):
        ms = [m for _, m in grp]
        if len(ms) > 1:
            worst = max(worst, max(ms) / min(ms))
    return FlowChiReport(tuple(samples), fit, c_fit, worst, tuple(pts))


@dataclass(frozen=True)
class DecayReport:
    fit_l2: PowerLawFit
    fit_linf: PowerLawFit
    times: tuple
    l2: tuple
    linf: tuple


def _decay_samples(records, t_lo, t_hi):
    sel = [r for r in records if t_lo - 1e-9 <= r.t <= t_hi + 1e-9]
    return ([r.t for r in sel], [r.lp[2] for r in sel], [r.lp[INF] for r in sel])


def diffusion_decay(base: Scenario, t_lo: float = 1.0, t_hi: float = 20.0) -> DecayReport:
    """Fit L^2 and L^inf decay of the passive density over ``[t_lo, t_hi]``."""
    p = base.params
    if p.chi != 0 or p.eps != 0:
        raise ValueError("diffusion_decay needs chi = eps = 0")
    # mass is conserved here, so the steady-mass stop must not fire
    tr = simulate(base.with_control(steady_tol=0.0), t_end=t_hi)
    if tr.final_time < t_hi - 1e-9:
        raise ValueError(f"decay window cut short at t={tr.final_time:.6g} "
                         f"({tr.result.stop_reason})")
    t, l2, linf = _decay_samples(tr.records, t_lo, t_hi)
    return DecayReport(fit_power_law(t, l2), fit_power_law(t, linf),
                       tuple(t), tuple(l2), tuple(linf))


def flow_decay_bound(base: Scenario, reference: PowerLawFit, factor: float = 10.0,
                     t_lo: float = 1.0, t_hi: float = 20.0) -> tuple[bool, float]:
    """Check ``max b(t) <= factor * reference(t)`` along a run with the base flow.

    Returns (holds, worst ratio of observed max to the bound).
    """
    tr = simulate(base.with_control(steady_tol=0.0), t_end=t_hi)
    t, _, linf = _decay_samples(tr.records, t_lo, t_hi)
    ratios = [m / (factor * reference(tt)) for tt, m in zip(t, linf)]
    worst = max(ratios)
    return worst <= 1.0, float(worst)


# -- comparison principle ---------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    margin: float                  # max over records and points of rho - b
    t_worst: float
    where: tuple[float, float]
    b0_max: float


def comparison_check(base: Scenario) -> ComparisonReport:
    """Co-step the reacting density and the passive density with one dt sequence."""
    p = base.params
    if p.chi != 0:
        raise ValueError("comparison_check needs chi = 0")
    passive = replace(p, eps=0.0)
    g = base.grid
    rho0 = base.initial()
    a = State(0.0, rho0)
    b = State(0.0, rho0)
    ctl = base.control
    worst, tw, where = -INF, 0.0, (math.nan, math.nan)
    k = 1
    t_end = base.t_end

    def probe(sa, sb):
        nonlocal worst, tw, where
        d = sa.rho.values - sb.rho.values
        i = np.unravel_index(int(np.argmax(d)), d.shape)
        if d[i] > worst:
            worst, tw = float(d[i]), sa.t
            where = (float(g.x[i[1]]), float(g.x[i[0]]))

    probe(a, b)
    while a.t < t_end - 1e-12:
        dt = min(stable_dt(a, p, ctl), stable_dt(b, passive, ctl))
        t_rec = k * base.record_every
        if a.t + dt >= t_rec - 1e-12:
            dt = t_rec - a.t
            k += 1
        dt = min(dt, t_end - a.t)
        a = step(a, p, dt, ctl)
        b = step(b, passive, dt, ctl)
        check_containment(b.rho, ctl.containment_tol)
        probe(a, b)
    return ComparisonReport(worst, tw, where, float(rho0.values.max()))


# -- two species ----------------------------------------------------------------


@dataclass(frozen=True)
class SystemReport:
    result: RunResult
    max_difference_drift: float     # max |(int s - int e) - (s0 - e0)|
    s_final: float
    e_final: float
    ordered: bool                    # int s >= int e at every record
    stop_reason: str


def two_species(sc: SystemScenario) -> SystemReport:
    g = sc.grid
    s0 = _superpose(g, sc.s_blobs)
    e0 = _superpose(g, sc.e_blobs)
    res = run_two_species(SystemState(0.0, s0, e0), sc.params, sc.t_end,
                          sc.record_every, sc.control)
    sp = [r.species for r in res.records]
    d0 = sp[0]["s"] - sp[0]["e"]
    drift = max(abs((x["s"] - x["e"]) - d0) for x in sp)
    ordered = all(x["s"] >= x["e"] for x in sp) if d0 >= 0 else all(x["e"] >= x["s"] for x in sp)
    return SystemReport(res, float(drift), sp[-1]["s"], sp[-1]["e"], ordered, res.stop_reason)


# -- reaction-independence of the chemotactic time scale ------------------------------


@dataclass(frozen=True)
class HalfMassReport:
    eps: tuple
    times: tuple           # first record time with m0 < m0(0)/2 (nan if never)
    spread: float          # max/min of the times


def half_mass_times(base: Scenario, eps_list) -> HalfMassReport:
    times = []
    for e in eps_list:
        tr = simulate(base.with_params(eps=e))
        m_half = 0.5 * tr.records[0].m0
        hit = next((r.t for r in tr.records if r.m0 < m_half), math.nan)
        times.append(float(hit))
    ok = [t for t in times if math.isfinite(t)]
    spread = max(ok) / min(ok) if len(ok) == len(times) and min(ok) > 0 else INF
    return HalfMassReport(tuple(eps_list), tuple(times), float(spread))


# -- Gagliardo-Nirenberg ------------------------------------------------------------


@dataclass(frozen=True)
class GNCase:
    """``|v|_q <= C |grad v|_2^a |v|_r^(1-a)`` in d = 2."""

    q: float
    r: float

    def __post_init__(self):
        if not (self.q > self.r > 0):
            raise ValueError(f"GN case needs q > r > 0, got q={self.q}, r={self.r}")
        if not 0 < self.a <= 1:
            raise ValueError(f"GN exponent a={self.a} outside (0, 1]")

    d = 2

    @property
    def a(self) -> float:
        return (1 / self.r - 1 / self.q) / (1 / self.d - 0.5 + 1 / self.r)

    @classmethod
    def absorption_use_site(cls, q: int) -> GNCase:
        """The case behind ``int rho^(q+1) <= C int |grad rho^(q/2)|^2 int rho``
        for ``v = rho^(q/2)``."""
        return cls(2 + 2 / q, 2 / q)


def _quasi_norm(v: np.ndarray, p: float, grid: Grid) -> float:
    return float((np.sum(np.abs(v) ** p) * grid.cell_area) ** (1 / p))


def gn_ratio(v: Field, case: GNCase) -> float:
    if not np.any(v.values):
        raise ValueError("GN ratio of the zero field is undefined")
    g = v.grid
    grad = gradient(v)
    gnorm = lp_norm(np.hypot(grad.x_values, grad.y_values), 2, g)
    a = case.a
    return _quasi_norm(v.values, case.q, g) / (gnorm**a * _quasi_norm(v.values, case.r, g) ** (1 - a))


# test functions are described by parameters so they can be dilated exactly

@dataclass(frozen=True)
class ProbeFunction:
    """Sum of Gaussian bumps, optionally modulated by ``1 + depth cos(k . x + phase)``."""

    bumps: tuple                    # (weight, cx, cy, sigma) offsets from box center
    wave: tuple = (0.0, 0.0, 0.0, 0.0)   # (kx, ky, phase, depth)
    kind: str = "gaussian"

    def sample(self, grid: Grid, dilation: float = 1.0) -> Field:
        """Sample ``v(dilation * (x - c))``."""
        X, Y = grid.coords
        cx, cy = grid.center
        x = dilation * (X - cx)
        y = dilation * (Y - cy)
        v = np.zeros((grid.n, grid.n))
        for w, bx, by, s in self.bumps:
            v = v + w * np.exp(-((x - bx) ** 2 + (y - by) ** 2) / (2 * s * s))
        kx, ky, ph, depth = self.wave
        if depth:
            v = v * (1 + depth * np.cos(kx * x + ky * y + ph))
        return Field(grid, v)


def gn_family(seed: int, size: int) -> list[ProbeFunction]:
    """Deterministic family cycling through single Gaussians, mixtures and
    modulated bumps.  Widths and offsets keep every member (and its
    dilations by 1/2 and 2) resolved and contained on ``GN_GRID``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(size):
        kind = ("gaussian", "mixture", "wave")[i % 3]
        if kind == "gaussian":
            out.append(ProbeFunction(((1.0, *rng.uniform(-1.5, 1.5, 2), rng.uniform(1.0, 2.0)),)))
        elif kind == "mixture":
            m = int(rng.integers(2, 5))
            bumps = tuple((rng.uniform(0.2, 1.0), *rng.uniform(-2.0, 2.0, 2), rng.uniform(1.0, 1.8))
                          for _ in range(m))
            out.append(ProbeFunction(bumps, kind="mixture"))
        else:
            s = rng.uniform(1.4, 2.0)
            k = rng.uniform(0.5, 1.5)
            ang = rng.uniform(0, 2 * np.pi)
            wave = (k * math.cos(ang), k * math.sin(ang), rng.uniform(0, 2 * np.pi),
                    rng.uniform(0.2, 0.9))
            out.append(ProbeFunction(((1.0, 0.0, 0.0, s),), wave, kind="wave"))
    return out


GN_GRID = (512, 64.0)


@dataclass(frozen=True)
class GNCaseReport:
    case: GNCase
    max_ratio: float
    max_ratio_half: float          # over the first half of the family
    amplitude_dev: float           # worst |ratio(5v)/ratio(v) - 1|
    dilation_dev: float            # worst |ratio(v(lambda x))/ratio(v) - 1|, lambda in {1/2, 2}

    @property
    def stability(self) -> float:
        return abs(self.max_ratio / self.max_ratio_half - 1)


def gn_suite(seed: int, cases, family_size: int = 50) -> list[GNCaseReport]:
    grid = make_grid(*GN_GRID)
    fam = gn_family(seed, 2 * family_size)
    fields = [f.sample(grid) for f in fam]
    for f in fields:
        check_containment(f)
    dil = {lam: [f.sample(grid, lam) for f in fam[:family_size]] for lam in (0.5, 2.0)}
    for fs in dil.values():
        for f in fs:
            check_containment(f)
    reports = []
    for case in cases:
        ratios = [gn_ratio(f, case) for f in fields]
        amp = max(abs(gn_ratio(5.0 * f, case) / r - 1) for f, r in zip(fields[:family_size], ratios))
        dd = 0.0
        for fs in dil.values():
            for f, r in zip(fs, ratios):
                dd = max(dd, abs(gn_ratio(f, case) / r - 1))
        reports.append(GNCaseReport(case, max(ratios), max(ratios[:family_size]), amp, dd))
    return reports
