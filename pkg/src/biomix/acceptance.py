"""Acceptance suite: every criterion at its stated tolerance.

``run_suite(full=True)`` evaluates all fifteen criteria; the quick mode runs
the subset whose configurations finish in seconds.  Each criterion prints one
``PASS``/``FAIL`` line.  With ``out`` set, a summary and per-criterion CSVs
are written there; in quick mode those files contain no timings, so two runs
produce identical bytes.
"""

from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from biomix import diagnostics
from biomix import experiments as ex
from biomix.dynamics import ModelParams, StepControl, SystemParams
from biomix.experiments import Blob, Scenario, SystemScenario
from biomix.flows import FlowSpec
from biomix.spectral import Field, make_grid

CELLULAR = FlowSpec("cellular", 1.0)

# Single run shared by the identity criteria.
IDENTITY_RUN = Scenario(256, 20.0, ModelParams(chi=5.0, eps=1.0, q=3), (Blob(1.0, 1.0),),
                        t_end=1.0, record_every=0.01, control=StepControl(dt_max=0.01))

# chi sweep: q = 6 and eps = 6 keep the plateau resolved at n = 512 while the
# initial max 0.884 stays below (chi_min / eps)^(1/(q-2)) = 0.904.  The
# long-time value is the mass when the density first reaches the boundary strip.
CHI_LIST = (4.0, 8.0, 16.0, 32.0, 64.0)
CHI_BASE = Scenario(512, 20.0, ModelParams(chi=4.0, eps=6.0, q=6), (Blob(8.0, 1.2),),
                    t_end=6.0, record_every=0.01,
                    control=StepControl(stop_on_containment=True))
BOUND_CHIS = (4.0, 16.0, 64.0)

# flow-enhanced decay on the chi-sweep family, stirred by one cellular roll per
# box side; the cellular flow carries the density to the boundary strip soon
# after t = 1, which caps the tau grid.
FLOW_CHI_LIST = (8.0, 16.0, 32.0, 64.0)
TAU_GRID = (0.125, 0.25, 0.5, 1.0)
FLOW_BASE = Scenario(512, 20.0, ModelParams(chi=8.0, eps=6.0, q=6, flow=CELLULAR),
                     (Blob(8.0, 1.2),), t_end=1.0, record_every=0.125 / 4,
                     control=StepControl(stop_on_containment=True))

EPS_LIST = (0.01, 0.02, 0.05, 0.1)
PASSIVE_BASE = Scenario(256, 20.0, ModelParams(chi=0.0, eps=1.0, q=3, flow=CELLULAR),
                        (Blob(1.0, 1.0),), t_end=0.8, record_every=0.01,
                        control=StepControl(dt_max=0.01))

DECAY_BASE = Scenario(512, 80.0, ModelParams(chi=0.0, eps=0.0, q=3), (Blob(1.0, 0.625),),
                      t_end=20.0, record_every=0.25, control=StepControl(dt_max=0.05))

SYSTEM_RUN = SystemScenario(256, 20.0, SystemParams(eps=1.0, q=4, kappa1=1.0, kappa2=0.5,
                                                    flow=CELLULAR),
                            (Blob(1.0, 1.0),), (Blob(0.7, 1.0),), t_end=2.0, record_every=0.01,
                            control=StepControl(dt_max=0.01, stop_on_containment=True))

HALF_MASS_EPS = (0.1, 1.0, 10.0)
HALF_MASS_BASE = Scenario(512, 20.0, ModelParams(chi=32.0, eps=1.0, q=6), (Blob(8.0, 1.2),),
                          t_end=0.3, record_every=0.01,
                          control=StepControl(stop_on_containment=True))

GN_CASES = (ex.GNCase(2, 1), ex.GNCase(4, 2), ex.GNCase.absorption_use_site(3))
GN_SEED = 0
GN_FAMILY = 50

QUICK = (3, 6, 7, 11, 12, 13)


@dataclass
class Result:
    number: int
    title: str
    passed: bool
    detail: str
    table: tuple = ()          # (header, rows) written as criterion_<n>.csv

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.number:2d} {self.title}: {self.detail}"


@dataclass
class Context:
    """Runs shared between criteria."""

    cache: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)     # criterion -> [Trajectory or SweepPoint]

    def get(self, key, make):
        if key not in self.cache:
            self.cache[key] = make()
        return self.cache[key]


def _identity(ctx: Context):
    def make():
        t0 = time.perf_counter()
        base = ex.simulate(IDENTITY_RUN)
        fine_sc = IDENTITY_RUN.__class__(512, IDENTITY_RUN.box_size, IDENTITY_RUN.params,
                                         IDENTITY_RUN.blobs, IDENTITY_RUN.t_end, 0.005,
                                         StepControl(dt_max=0.005))
        fine = ex.simulate(fine_sc)
        elapsed = time.perf_counter() - t0
        return (base, diagnostics.identity_residuals(base.records, IDENTITY_RUN.params),
                fine, diagnostics.identity_residuals(fine.records, IDENTITY_RUN.params), elapsed)
    return ctx.get("identity", make)


def _identity_base(ctx: Context):
    def make():
        base = ex.simulate(IDENTITY_RUN)
        return base, diagnostics.identity_residuals(base.records, IDENTITY_RUN.params)
    if "identity" in ctx.cache:
        return ctx.cache["identity"][:2]
    return ctx.get("identity_base", make)


def _residual_table(res: diagnostics.ResidualSeries):
    return (("t_mid", "mass_rel", "moment_rel", "lq_rel"),
            list(zip(res.t_mid, res.mass_rel, res.moment_rel, res.lq_rel)))


def c1(ctx):
    base, rb, fine, rf, elapsed = _identity(ctx)
    ctx.trajectories[1] = [base, fine]
    a, b = float(rb.moment_rel.max()), float(rf.moment_rel.max())
    ratio = a / b
    ok = a <= 1e-2 and ratio >= 4 and elapsed <= 120
    return Result(1, "second-moment identity", ok,
                  f"max rel residual {a:.3e} (limit 1e-2); n=512 {b:.3e}, shrink {ratio:.3f} "
                  f"(need >= 4); runtime {elapsed:.1f} s (limit 120)", _residual_table(rb))


def c2(ctx):
    _, rb, _, rf, _ = _identity(ctx)
    a, b = float(rb.lq_rel.max()), float(rf.lq_rel.max())
    ratio = a / b
    return Result(2, "L^q identity", a <= 2e-2 and ratio >= 4,
                  f"max rel residual {a:.3e} (limit 2e-2); n=512 {b:.3e}, shrink {ratio:.3f} "
                  f"(need >= 4)")


def c3(ctx):
    base, rb = _identity_base(ctx)
    ctx.trajectories.setdefault(3, [base])
    a = float(rb.mass_rel.max())
    return Result(3, "mass identity", a <= 1e-3, f"max rel residual {a:.3e} (limit 1e-3)",
                  _residual_table(rb))


def _chi_sweep(ctx):
    return ctx.get("chi", lambda: ex.chi_scaling(CHI_BASE, CHI_LIST))


def c4(ctx):
    rep = _chi_sweep(ctx)
    spot = diagnostics.moment_mass_bound(10.0, 1.0, 1.0)
    spot_ok = abs(spot - 0.57417) <= 5e-6
    lines, ok = [], spot_ok
    rows = []
    for p in rep.points:
        if p.value not in BOUND_CHIS:
            continue
        lit, cor = p.literal_bounds["moment_mass_bound"], p.bounds["moment_mass_bound"]
        ok &= lit.passed
        lines.append(f"chi={p.value:g} {'ok' if lit.passed else 'violated'}"
                     f" (worst margin {lit.worst_margin:.3e} at t={lit.t_worst:.3g};"
                     f" with chi/2pi {'ok' if cor.passed else 'violated'})")
        rows.append((p.value, lit.worst_margin, lit.t_worst, float(lit.passed),
                     cor.worst_margin, float(cor.passed)))
    return Result(4, "explicit L^1 bound", ok,
                  f"spot {spot:.5f} (expect 0.57417); " + "; ".join(lines),
                  (("chi", "literal_margin", "t_worst", "literal_ok", "scaled_margin",
                    "scaled_ok"), rows))


def c5(ctx):
    worst, where = math.inf, ""
    ok = True
    count = 0
    for crit, items in sorted(ctx.trajectories.items()):
        for tr in items:
            b = tr.bounds["linf_ceiling"]
            count += 1
            ok &= b.passed
            n0 = float(b.detail.split("=")[1])
            rel = b.worst_margin / n0
            if rel < worst:
                worst, where = rel, f"criterion {crit}"
    return Result(5, "L^inf ceiling", ok and count > 0,
                  f"{count} runs; tightest relative margin {worst:.3e} ({where})")


def _passive(ctx):
    return ctx.get("passive", lambda: ex.simulate(PASSIVE_BASE))


def c6(ctx):
    tr = _passive(ctx)
    b = tr.bounds["ratio_monotone"]
    return Result(6, "norm-ratio monotonicity", b.passed,
                  f"worst margin {b.worst_margin:.3e} at t={b.t_worst:.3g} over "
                  f"{len(tr.records)} records")


def c7(ctx):
    rep = ctx.get("eps", lambda: ex.epsilon_linearity(PASSIVE_BASE, EPS_LIST))
    ctx.trajectories[7] = list(rep.points)
    floors = all(p.m0_final > 0 for p in rep.points)
    e = rep.fit.exponent
    return Result(7, "eps-linearity of the deficit", floors and 0.9 <= e <= 1.1,
                  f"exponent {e:.4f} (need [0.9, 1.1]); final masses "
                  + ", ".join(f"{p.m0_final:.6f}" for p in rep.points),
                  (("eps", "m0_final", "deficit", "t_final"),
                   [(p.value, p.m0_final, p.m0_initial - p.m0_final, p.t_final)
                    for p in rep.points]))


def c8(ctx):
    rep = _chi_sweep(ctx)
    ctx.trajectories[8] = list(rep.points)
    pos = all(p.m0_final > 0 for p in rep.points)
    e = rep.fit.exponent
    return Result(8, "chi scaling of the long-time mass", pos and -1.3 <= e <= -0.7,
                  f"exponent {e:.4f} (need [-1.3, -0.7]); m0 at stop "
                  + ", ".join(f"chi={p.value:g}:{p.m0_final:.4f}@t={p.t_final:.2f}"
                              for p in rep.points),
                  (("chi", "m0_final", "t_final", "stop"),
                   [(p.value, p.m0_final, p.t_final, p.stop_reason) for p in rep.points]))


def c9(ctx):
    rep = ctx.get("flowchi", lambda: ex.flow_chi_scaling(FLOW_BASE, FLOW_CHI_LIST, TAU_GRID))
    ctx.trajectories[9] = list(rep.points)
    ok = rep.covered and rep.collapse_factor <= 3
    return Result(9, "flow-enhanced decay", ok,
                  f"C_fit {rep.c_fit:.4f} covers {len(rep.samples)} samples: {rep.covered}; "
                  f"collapse factor {rep.collapse_factor:.3f} (limit 3); "
                  f"fitted exponent {rep.fit.exponent:.3f}",
                  (("chi", "tau", "m0"), list(rep.samples)))


def c10(ctx):
    rep = ex.diffusion_decay(DECAY_BASE, 1.0, 20.0)
    e2, ei = rep.fit_l2.exponent, rep.fit_linf.exponent
    ok = abs(e2 + 0.5) <= 0.05 and abs(ei + 1) <= 0.05
    return Result(10, "diffusion decay rates", ok,
                  f"L2 exponent {e2:.4f} (-0.5 +- 0.05); Linf exponent {ei:.4f} (-1 +- 0.05)",
                  (("t", "l2", "linf"), list(zip(rep.times, rep.l2, rep.linf))))


def c11(ctx):
    rep = ctx.get("cmp", lambda: ex.comparison_check(PASSIVE_BASE))
    lim = 1e-8 * rep.b0_max
    return Result(11, "comparison principle", rep.margin <= lim,
                  f"worst rho - b {rep.margin:.3e} at t={rep.t_worst:.3g} (limit {lim:.3e})")


def c12(ctx):
    rep = ctx.get("system", lambda: ex.two_species(SYSTEM_RUN))
    ok = rep.max_difference_drift <= 1e-8 and rep.s_final > 0 and rep.e_final > 0 and rep.ordered
    recs = rep.result.records
    return Result(12, "two-species system", ok,
                  f"drift of s - e mass {rep.max_difference_drift:.3e} (limit 1e-8); final "
                  f"s {rep.s_final:.6f}, e {rep.e_final:.6f}; s >= e throughout: {rep.ordered}; "
                  f"stop {rep.stop_reason} at t={recs[-1].t:.3g}",
                  (("t", "s_mass", "e_mass"),
                   [(r.t, r.species["s"], r.species["e"]) for r in recs]))


def c13(ctx):
    g = make_grid(256, 20.0)
    X, Y = g.coords
    v = Field(g, np.exp(-((X - 10) ** 2 + (Y - 10) ** 2) / 2))
    ratio = ex.gn_ratio(v, ex.GNCase(2, 1))
    reps = ex.gn_suite(GN_SEED, GN_CASES, GN_FAMILY)
    amp = max(r.amplitude_dev for r in reps)
    dil = max(r.dilation_dev for r in reps)
    stab = max(r.stability for r in reps)
    ok = abs(ratio - 0.53113) <= 1e-3 and amp <= 1e-12 and dil < 1e-2 and stab <= 0.05
    return Result(13, "Gagliardo-Nirenberg ratios", ok,
                  f"Gaussian ratio {ratio:.6f} (0.53113 +- 1e-3); amplitude dev {amp:.2e}; "
                  f"dilation dev {dil:.2e} (< 1e-2); family-doubling change {stab:.2e} (<= 0.05)",
                  (("q", "r", "a", "max_ratio", "max_ratio_half", "amplitude_dev", "dilation_dev"),
                   [(r.case.q, r.case.r, r.case.a, r.max_ratio, r.max_ratio_half,
                     r.amplitude_dev, r.dilation_dev) for r in reps]))


def c14(ctx):
    rep = ex.half_mass_times(HALF_MASS_BASE, HALF_MASS_EPS)
    return Result(14, "eps-independence of the half-mass time", rep.spread <= 3,
                  "half-mass times " + ", ".join(f"eps={e:g}:{t:.3f}" for e, t in
                                                 zip(rep.eps, rep.times))
                  + f"; spread {rep.spread:.3f} (limit 3)",
                  (("eps", "t_half"), list(zip(rep.eps, rep.times))))


def _same_tree(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(
        _same_tree(a / d, b / d) for d in cmp.common_dirs)


def c15(ctx):
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        run_suite(False, a, echo=False)
        run_suite(False, b, echo=False)
        files = sorted(p.name for p in a.iterdir())
        same = _same_tree(a, b)
    return Result(15, "determinism of verify --quick", same,
                  f"{len(files)} files compared byte for byte: {'identical' if same else 'differ'}")


CRITERIA = (c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12, c13, c14, c15)


def _num(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def run_suite(full: bool, out: Path | None = None, echo: bool = True,
              only=None) -> list[Result]:
    """Run the suite and return one Result per criterion, in order."""
    ctx = Context()
    wanted = set(only) if only is not None else (
        {f.__name__ for f in CRITERIA} if full else {f"c{n}" for n in QUICK})
    results = []
    for fn in CRITERIA:
        if fn.__name__ not in wanted:
            continue
        if fn is c5:
            # the producers cache their runs, so the later criteria reuse them
            for pre in (c1, c3, c7, c8, c9):
                pre(ctx)
        r = fn(ctx)
        results.append(r)
        if echo:
            print(r.line(), flush=True)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text("\n".join(r.line() for r in results) + "\n")
        for r in results:
            if r.table:
                header, rows = r.table
                text = "\n".join([",".join(header)] + [",".join(_num(v) for v in row)
                                                       for row in rows])
                (out / f"criterion_{r.number:02d}.csv").write_text(text + "\n")
    return results
