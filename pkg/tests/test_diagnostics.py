import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biomix import diagnostics as dg
from biomix.diagnostics import INF, InitialStats, lp_norm, second_moment
from biomix.dynamics import ModelParams, State, StepControl, run
from biomix.flows import FlowSpec
from biomix.spectral import Field, gaussian, integrate, make_grid

G = make_grid(256, 20.0)


def test_lp_norm_examples():
    assert lp_norm(Field(G, np.ones((256, 256))), 1) == pytest.approx(400.0, rel=1e-14)
    f = gaussian(G, 1.0, sigma=1.0)
    assert lp_norm(f, 2) == pytest.approx(1 / (2 * math.sqrt(math.pi)), abs=1e-6)
    assert lp_norm(f, INF) == pytest.approx(1 / (2 * math.pi), abs=1e-6)


def test_lp_norm_rejects_small_p():
    with pytest.raises(ValueError):
        lp_norm(Field(G, np.ones((256, 256))), 0.5)


def test_second_moment_gaussian():
    m2, c = second_moment(gaussian(G, 1.0, center=(9.5, 10.5), sigma=1.0))
    assert m2 == pytest.approx(2.0, abs=1e-6)
    assert c == pytest.approx((9.5, 10.5), abs=1e-10)


def test_second_moment_pair():
    f = gaussian(G, 0.5, center=(8.0, 10.0), sigma=0.5) + gaussian(G, 0.5, center=(12.0, 10.0), sigma=0.5)
    m2, c = second_moment(f)
    assert c == pytest.approx((10.0, 10.0), abs=1e-10)
    assert m2 == pytest.approx(4.5, abs=1e-4)


def test_second_moment_translation():
    f = gaussian(G, 1.0, center=(9.0, 10.0), sigma=1.2)
    shifted = Field(G, np.roll(f.values, (3, -5), axis=(0, 1)))
    assert second_moment(shifted)[0] == pytest.approx(second_moment(f)[0], abs=1e-10)


def test_second_moment_rejects_zero_mass():
    with pytest.raises(ValueError):
        second_moment(Field(G, np.zeros((256, 256))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 1.5, 2.0, 3.0, 7.0, INF]))
def test_lp_norm_monotone(seed, p):
    g = make_grid(16, 4.0)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((16, 16))
    h = np.abs(f) + rng.uniform(0, 1, (16, 16))
    assert lp_norm(Field(g, f), p) <= lp_norm(Field(g, h), p) * (1 + 1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_l1_is_integral_of_nonnegative(seed):
    g = make_grid(16, 4.0)
    f = Field(g, np.random.default_rng(seed).uniform(0, 3, (16, 16)))
    assert lp_norm(f, 1) == pytest.approx(integrate(f), rel=1e-12)


def test_record_fields_and_holder():
    p = ModelParams(chi=5, eps=1, q=3)
    res = run(State(0.0, gaussian(G, 1.0, sigma=1.0)), p, 0.2, 0.05)
    for r in res.records:
        assert set(r.lp) == {1, 2, 3, 4, 5, INF}
        assert r.lp[1] == pytest.approx(r.m0, rel=1e-12)
        assert r.m2 >= 0
        assert r.lp[3] ** 3 <= r.lp[INF] ** 2 * r.lp[1] * (1 + 1e-10)


# -- residuals -----------------------------------------------------------------------

def _residuals(params, t_end=0.5, every=0.01, n=256, sigma=1.0):
    g = make_grid(n, 20.0)
    res = run(State(0.0, gaussian(g, 1.0, sigma=sigma)), params, t_end, every,
              StepControl(dt_max=every))
    return res.records, dg.identity_residuals(res.records, params)


def test_mass_residual_vanishes_without_reaction():
    _, r = _residuals(ModelParams(chi=0, eps=0), 0.2)
    assert np.abs(r.mass_abs).max() <= 1e-10


def test_moment_growth_under_diffusion():
    recs, r = _residuals(ModelParams(chi=0, eps=0), 0.5)
    assert r.moment_rel.max() <= 1e-6
    assert recs[-1].m2 == pytest.approx(recs[0].m2 + 4 * recs[0].m0 * 0.5, rel=1e-6)


def test_full_model_residuals_small():
    _, r = _residuals(ModelParams(chi=5, eps=1, q=3), 0.3)
    mx = r.max_rel()
    assert mx["mass"] <= 1e-3 and mx["moment"] <= 1e-2 and mx["lq"] <= 2e-2


def test_moment_law_with_flow():
    p = ModelParams(chi=2, eps=0.5, q=3, flow=FlowSpec("cellular", 1.0))
    g = make_grid(256, 20.0)
    rho0 = gaussian(g, 1.0, center=(9.0, 10.5), sigma=1.0)
    res = run(State(0.0, rho0), p, 0.3, 0.01)
    r = dg.identity_residuals(res.records, p)
    assert r.moment_rel.max() <= 1e-3


def test_residuals_reject_bad_cadence():
    recs, _ = _residuals(ModelParams(chi=0, eps=0), 0.05)
    with pytest.raises(ValueError):
        dg.identity_residuals(recs[:1], ModelParams())
    with pytest.raises(ValueError):
        dg.identity_residuals([recs[1], recs[0]], ModelParams())


# -- bounds -------------------------------------------------------------------------

def test_moment_mass_bound_value():
    assert dg.moment_mass_bound(10.0, 1.0, 1.0) == pytest.approx(0.2 * (1 + math.sqrt(3.5)), rel=1e-14)
    assert dg.moment_mass_bound(10.0, 1.0, 1.0) == pytest.approx(0.57417, abs=5e-6)


def test_linf_ceiling_value():
    assert dg.linf_ceiling(8.0, 1.0, 3, 0.2) == pytest.approx(8.0)
    assert dg.linf_ceiling(8.0, 1.0, 3, 9.0) == 9.0
    assert dg.linf_ceiling(0.0, 1.0, 3, 0.2) == 0.2


def test_check_bounds_diffusive_ratios():
    p = ModelParams(chi=0, eps=1, q=3, flow=FlowSpec("cellular", 1.0))
    rho0 = gaussian(G, 1.0, sigma=1.0)
    res = run(State(0.0, rho0), p, 0.8, 0.05)
    rep = dg.check_bounds(res.records, p, InitialStats.of(rho0))
    assert rep["ratio_monotone"].passed and rep["linf_ceiling"].passed
    assert not rep["moment_mass_bound"].applicable
    r0, r1 = res.records[0], res.records[-1]
    assert r1.lp[INF] / r1.lp[1] <= r0.lp[INF] / r0.lp[1]
    assert rep.passed and len(rep.summary_lines()) == 3


def test_check_bounds_flags_violation():
    # a record whose max exceeds the ceiling must fail the L^inf check
    p = ModelParams(chi=0, eps=1, q=3)
    rho0 = gaussian(G, 1.0, sigma=1.0)
    bumped = Field(G, rho0.values * 1.01)
    recs = [dg.make_record(0.0, rho0, 3, G.center, None), dg.make_record(0.1, bumped, 3, G.center, None)]
    rep = dg.check_bounds(recs, p, InitialStats.of(rho0))
    assert not rep["linf_ceiling"].passed and not rep.passed


def test_check_bounds_rejects_empty():
    with pytest.raises(ValueError):
        dg.check_bounds([], ModelParams(), InitialStats.of(gaussian(G, 1.0)))
