import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biomix import experiments as ex
from biomix.dynamics import ContainmentAbort, ModelParams, StepControl, SystemParams
from biomix.experiments import Blob, GNCase, Scenario, SystemScenario, fit_power_law
from biomix.flows import FlowSpec
from biomix.spectral import Field, make_grid

CELL = FlowSpec("cellular", 1.0)


def small(**kw):
    base = dict(n=64, box_size=20.0, blobs=(Blob(1.0, 1.5),), t_end=0.2, record_every=0.02,
                control=StepControl(dt_max=0.02))
    base.update(kw)
    return Scenario(**base)


# -- power-law fits -----------------------------------------------------------------

def test_fit_exact_power_law():
    f = fit_power_law([1, 10, 100], [2, 0.2, 0.02])
    assert f.exponent == pytest.approx(-1, abs=1e-12)
    assert f.prefactor == pytest.approx(2, rel=1e-12)
    assert f.rms_residual <= 1e-12 and f.count == 3


def test_fit_constant():
    assert fit_power_law([1, 2, 3, 4], [5, 5, 5, 5]).exponent == pytest.approx(0, abs=1e-12)


def test_fit_noisy_sqrt():
    rng = np.random.default_rng(3)
    x = np.geomspace(1, 1e3, 20)
    y = np.sqrt(x) * (1 + 0.01 * rng.standard_normal(20))
    assert fit_power_law(x, y).exponent == pytest.approx(0.5, abs=0.05)


@pytest.mark.parametrize("xs,ys", [([1, 2], [1, 2]), ([1, 2, 0], [1, 2, 3]),
                                   ([1, 2, 3], [1, -2, 3]), ([1, 2, 3], [1, 2])])
def test_fit_rejects(xs, ys):
    with pytest.raises(ValueError):
        fit_power_law(xs, ys)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 100))
def test_fit_recovers_any_power_law(k, c):
    x = np.array([0.5, 1.0, 3.0, 7.0])
    f = fit_power_law(x, c * x**k)
    assert f.exponent == pytest.approx(k, abs=1e-9)
    assert f.prefactor == pytest.approx(c, rel=1e-9)
    assert f(2.0) == pytest.approx(c * 2.0**k, rel=1e-9)


# -- drivers: preconditions -------------------------------------------------------

def test_epsilon_linearity_preconditions():
    with pytest.raises(ValueError):
        ex.epsilon_linearity(small(params=ModelParams(chi=1.0)), [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        ex.epsilon_linearity(small(params=ModelParams(chi=0.0)), [0.0, 0.1, 0.2])


def test_chi_scaling_preconditions():
    with pytest.raises(ValueError):
        ex.chi_scaling(small(params=ModelParams(chi=1.0, flow=CELL)), [1, 2, 4])
    # max rho0 = 8 / (2 pi 2.25) = 0.57 exceeds (1 / 10) ^ 1
    with pytest.raises(ValueError):
        ex.chi_scaling(small(params=ModelParams(eps=10.0), blobs=(Blob(8.0, 1.5),)), [1, 2, 4])


def test_flow_chi_needs_flow():
    with pytest.raises(ValueError):
        ex.flow_chi_scaling(small(), [8, 16, 32], [0.1, 0.2])


def test_tau_window_clip():
    assert ex.tau_window(8.0, [0.5, 1.0, 2.0, 4.0]) == [0.5, 1.0, 2.0]
    assert ex.tau_window(27.0, [1.0, 3.0, 3.5]) == [1.0, 3.0]


def test_decay_preconditions():
    with pytest.raises(ValueError):
        ex.diffusion_decay(small(params=ModelParams(chi=0, eps=1)))
    # a 64-point box of side 20 cannot hold the density until t = 20
    with pytest.raises(ContainmentAbort):
        ex.diffusion_decay(small(params=ModelParams(chi=0, eps=0)), 1.0, 20.0)


def test_comparison_needs_chi_zero():
    with pytest.raises(ValueError):
        ex.comparison_check(small(params=ModelParams(chi=1.0)))


# -- drivers: small end-to-end runs ---------------------------------------------

def test_epsilon_linearity_small():
    rep = ex.epsilon_linearity(small(params=ModelParams(chi=0.0, flow=CELL)), [0.05, 0.1, 0.2])
    assert all(p.m0_final > 0 and p.mass_monotone and p.bounds.passed for p in rep.points)
    assert rep.fit.exponent == pytest.approx(1.0, abs=0.05)


def test_chi_scaling_small():
    sc = small(n=128, params=ModelParams(eps=1.0, q=3), blobs=(Blob(2.0, 1.0),), t_end=0.1)
    rep = ex.chi_scaling(sc, [1.0, 2.0, 4.0])
    assert [p.value for p in rep.points] == [1.0, 2.0, 4.0]
    assert all(p.bounds["linf_ceiling"].passed for p in rep.points)
    assert all(p.bounds["moment_mass_bound"].applicable for p in rep.points)


def test_flow_chi_small():
    sc = small(n=128, params=ModelParams(eps=1.0, q=3, flow=CELL), blobs=(Blob(2.0, 1.0),),
               record_every=0.05)
    rep = ex.flow_chi_scaling(sc, [8.0, 16.0], [0.05, 0.1, 0.2])
    assert len(rep.samples) == 6 and rep.covered
    assert rep.collapse_factor >= 1.0
    # (8, 0.1) and (16, 0.05) share chi * tau = 0.8
    assert any(math.isclose(c * t, 0.8) for c, t, _ in rep.samples)


def test_comparison_zero_reaction_is_exact():
    rep = ex.comparison_check(small(params=ModelParams(chi=0.0, eps=0.0, flow=CELL)))
    assert rep.margin <= 1e-12


def test_comparison_margin_nonpositive():
    rep = ex.comparison_check(small(params=ModelParams(chi=0.0, eps=1.0, q=3, flow=CELL),
                                    blobs=(Blob(4.0, 1.5),)))
    assert rep.margin <= 1e-8 * rep.b0_max
    assert all(0 <= c <= 20 for c in rep.where)


def test_two_species_small():
    sc = SystemScenario(64, 20.0, SystemParams(eps=2.0, q=4), (Blob(1.0, 1.5),),
                        (Blob(0.7, 1.5),), t_end=0.2, record_every=0.02,
                        control=StepControl(dt_max=0.02))
    rep = ex.two_species(sc)
    assert rep.max_difference_drift <= 1e-12 and rep.ordered
    assert 0 < rep.e_final < 0.7 < rep.s_final < 1.0


def test_half_mass_times_small():
    sc = small(n=128, params=ModelParams(chi=0.0, eps=1.0, q=3), blobs=(Blob(40.0, 1.5),),
               t_end=0.4)
    rep = ex.half_mass_times(sc, [5.0, 10.0])
    assert all(math.isfinite(t) for t in rep.times)
    assert rep.times[1] <= rep.times[0] and rep.spread >= 1


def test_sweep_reproducible():
    sc = small(params=ModelParams(chi=0.0, flow=CELL))
    a = ex.epsilon_linearity(sc, [0.1, 0.2, 0.4])
    b = ex.epsilon_linearity(sc, [0.1, 0.2, 0.4])
    assert a.fit == b.fit
    assert [p.m0_final for p in a.points] == [p.m0_final for p in b.points]


# -- Gagliardo-Nirenberg ------------------------------------------------------------

def test_gn_exponent():
    assert GNCase(2, 1).a == pytest.approx(0.5)
    assert GNCase(4, 2).a == pytest.approx(0.5)
    assert GNCase.absorption_use_site(3).a == pytest.approx(3 / 4)


@pytest.mark.parametrize("q,r", [(2, 2), (1, 2), (2, 0), (2, -1)])
def test_gn_case_rejects(q, r):
    with pytest.raises(ValueError):
        GNCase(q, r)


def _gauss(n=256, L=20.0):
    g = make_grid(n, L)
    X, Y = g.coords
    return Field(g, np.exp(-((X - L / 2) ** 2 + (Y - L / 2) ** 2) / 2))


def test_gn_gaussian_ratio():
    expect = math.sqrt(math.pi) / (math.pi**0.25 * math.sqrt(2 * math.pi))
    assert expect == pytest.approx(0.53113, abs=1e-5)
    assert ex.gn_ratio(_gauss(), GNCase(2, 1)) == pytest.approx(expect, abs=1e-4)


def test_gn_rejects_zero():
    with pytest.raises(ValueError):
        ex.gn_ratio(Field(make_grid(16, 1.0), np.zeros((16, 16))), GNCase(2, 1))


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.sampled_from([(2, 1), (4, 2), (3, 0.5), (8 / 3, 2 / 3)]))
def test_gn_amplitude_invariance(c, qr):
    v = _gauss(64)
    case = GNCase(*qr)
    assert ex.gn_ratio(v * c, case) == pytest.approx(ex.gn_ratio(v, case), rel=1e-12)


def test_gn_dilation_of_gaussian():
    g = make_grid(512, 64.0)
    f = ex.ProbeFunction(((1.0, 0.0, 0.0, 1.5),))
    case = GNCase(4, 2)
    r1 = ex.gn_ratio(f.sample(g), case)
    assert ex.gn_ratio(f.sample(g, 2.0), case) == pytest.approx(r1, rel=1e-2)
    assert ex.gn_ratio(f.sample(g, 0.5), case) == pytest.approx(r1, rel=1e-2)


def test_gn_family_deterministic_and_mixed():
    a, b = ex.gn_family(7, 12), ex.gn_family(7, 12)
    assert a == b
    assert {f.kind for f in a} == {"gaussian", "mixture", "wave"}
    assert ex.gn_family(7, 24)[:12] == a


def test_gn_suite_small():
    reps = ex.gn_suite(1, [GNCase(2, 1), GNCase(4, 2)], family_size=6)
    for r in reps:
        assert math.isfinite(r.max_ratio) and r.max_ratio >= r.max_ratio_half > 0
        assert r.amplitude_dev <= 1e-12 and r.dilation_dev < 1e-2
