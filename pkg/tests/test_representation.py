import numpy as np
import pytest

from qbsde import forward_sde as fs
from qbsde import representation as rp
from qbsde.bsde_solver import RegressionConfig, solve_bsde, solve_colehopf
from qbsde.exceptions import BadParameters, DimensionMismatch, LadderTooCoarse, PicardDiverged
from qbsde.generators import AssumptionParams, GeneratorSpec, instantiate_generator
from qbsde.stochastic_core import make_grid, sample_brownian
from qbsde.terminals import brownian

PQ = instantiate_generator("pure_quadratic", (1,))
ZERO = instantiate_generator("zero")
BM = fs.zero_drift_unit_diffusion()


def _query(gen=PQ, coeffs=BM, t=0.0, y=0.0, x=0.0, q=1.0, **kw):
    return rp.RepresentationQuery(t, y, [x], [q], gen, coeffs, **kw)


def test_query_validation():
    assert _query(x=1.0).C0 == 6.0
    with pytest.raises(BadParameters):
        _query(x=1.0, C0=1.0)
    with pytest.raises(BadParameters):
        _query(t=1.0)
    with pytest.raises(DimensionMismatch):
        rp.RepresentationQuery(0.0, 0.0, [0.0, 0.0], [1.0], PQ, BM)


def test_target():
    assert _query().target() == pytest.approx(0.5)
    assert _query(ZERO, fs.constant(1.0, 1.0)).target() == pytest.approx(1.0)
    assert _query(PQ, fs.ou(2.0, 0.5), x=1.0, q=2.0).target() == pytest.approx(0.5 * 1.0 - 2.0 * 2.0)


@pytest.mark.parametrize("eps,sub", [((0.2, 0.1), 64), ((0.2, 0.1, 0.2), 64), ((0.2, 0.1, 0.08), 64),
                                     ((0.2, 0.1, 0.05), (64, 64)), ((0.2, 0.1, 0.0), 64)])
def test_ladder_validation(eps, sub):
    with pytest.raises(BadParameters):
        rp.EpsilonLadder(eps, sub)


def test_ladder_must_fit_horizon():
    with pytest.raises(BadParameters):
        rp.EpsilonLadder().check_fits(_query(t=0.9))


def test_zero_generator_quotient_is_zero():
    for route in rp.ROUTES:
        est = rp.quotient_estimate(_query(ZERO, y=0.7, x=0.3, q=-2.0), 0.1, 5000, 16, route=route)
        assert abs(est.quotient_mean) <= 3 * est.quotient_se + 1e-12


def test_colehopf_quotient_example():
    est = rp.quotient_estimate(_query(C0=5.0), 0.05, 50_000, 64, seed=0)
    assert abs(est.quotient_mean - 0.5) <= 3 * est.quotient_se + 0.03
    assert est.capped_fraction < 1e-3
    # Cole-Hopf on the same sub-interval
    grid = make_grid(0.0, 0.05, 64)
    bundle = sample_brownian(grid, 50_000, 1, 0)
    paths = fs.simulate_euler(BM, 0.0, [0.0], bundle)
    ch = solve_colehopf(1.0, brownian(), paths, bundle)
    assert abs(ch.y0 / 0.05 - 0.5) <= 3 * ch.y0_se / 0.05 + 0.03


def test_drift_quotient_example():
    est = rp.quotient_estimate(_query(ZERO, fs.constant(1.0, 1.0)), 0.05, 20_000, 32)
    assert abs(est.quotient_mean - 1.0) <= 3 * est.quotient_se + 0.03


def test_routes_agree():
    q = _query(y=0.2, q=0.8)
    a = rp.quotient_estimate(q, 0.1, 20_000, 32, seed=2, route="transformed")
    b = rp.quotient_estimate(q, 0.1, 20_000, 32, seed=2, route="direct")
    assert abs(a.quotient_mean - b.quotient_mean) <= 3 * (a.quotient_se + b.quotient_se) + 0.02


def test_limit_study_zero_generator():
    rep = rp.limit_study(_query(ZERO), n_paths=2000, zero_terminal=False)
    assert rep.target == 0.0 and rep.verdict
    assert rep.z_energy_slope is None and rep.sup_tildeY_slope is None
    assert [r["epsilon"] for r in rep.rows()] == [0.2, 0.1, 0.05, 0.025]


def test_limit_study_linear_ode():
    gen = instantiate_generator("linear", (1, 0))
    rep = rp.limit_study(_query(gen, y=2.0, q=0.0), n_paths=2000)
    assert rep.target == pytest.approx(2.0)
    assert abs(rep.extrapolated_limit - 2.0) <= 0.05
    assert rep.verdict


@pytest.mark.parametrize("gen,coeffs,x,y,target", [
    (PQ, fs.ou(1.0, 1.0), 0.5, 0.0, 0.0),
    (instantiate_generator("siny_quadratic"), BM, 0.0, 0.3, np.sin(0.3)),
])
def test_nontrivial_shifted_pair(gen, coeffs, x, y, target):
    rep = rp.limit_study(_query(gen, coeffs, x=x, y=y), n_paths=20_000, cfg=RegressionConfig(basis_degree=3), seed=3)
    assert rep.target == pytest.approx(target)
    assert rep.verdict
    # the energy bound is an upper bound; smooth cases decay at least as fast
    assert rep.energy_bound_ok()
    assert rep.z_energy_slope >= 1.6
    assert rep.sup_tildeY_slope >= 0.7
    assert np.all(np.diff(rep.l1_errors) < 0)
    for est in rep.estimates:
        assert rp.bound_audit(rep.query, est.eps, est).eq10_ok


def test_ladder_failure_is_reported():
    def broken(*args, **kw):
        raise PicardDiverged("boom")

    with pytest.raises(LadderTooCoarse, match="eps = 0.2"):
        rp.limit_study(_query(), n_paths=100, solve=broken)


def test_b_tilde_by_hand():
    # l(m) = 0.5 + m, b = 0.25, alpha = 0.5 so the a-priori chain enters through l
    gen = GeneratorSpec("custom", PQ.g1, PQ.g2, AssumptionParams(0.5, 0.0, 0.25, (0.5, 1.0)))
    q = _query(gen, y=0.5, x=1.0, q=2.0, C0=3.0)
    eps = 0.1
    level = 0.5 + 2.0 * (3.0 + 1.0)
    m = (level + 0.25 * eps) * np.exp(0.5 * eps) + level
    nu = BM.nu
    expected = 0.25 + 2 * 4.0 * nu ** 2 * 16.0 * (0.5 + 2 * m + 1) + 2.0 * nu * 4.0
    assert rp.b_tilde(q, eps) == pytest.approx(expected)


def test_bound_audit_zero_direction_has_infinite_margin():
    q = _query(ZERO, q=0.0)
    est = rp.quotient_estimate(q, 0.05, 2000, 16)
    audit = rp.bound_audit(q, 0.05, est)
    assert audit.eq3_ok and audit.eq10_ok
    assert audit.details["margin10"] == np.inf
    assert audit.details["margin3"] == np.inf


def test_bound_audit_pure_quadratic_and_adversarial():
    q = _query(C0=5.0)
    est = rp.quotient_estimate(q, 0.05, 20_000, 64)
    audit = rp.bound_audit(q, 0.05, est)
    assert audit.eq3_ok and audit.eq10_ok
    assert audit.details["margin10"] > 1.0
    inflated = dict(est.diagnostics, sup_tildeY=max(est.sup_tildeY, 1e-3 * audit.details["bound10"]) * 1e3 * 1.2)
    assert not rp.bound_audit(q, 0.05, inflated).eq10_ok


def test_affine_term_is_outside_b_tilde():
    # g = y, y = 2, q = 0: b_tilde = 0 yet the shifted solution moves by about 2 eps
    q = _query(instantiate_generator("linear", (1, 0)), y=2.0, q=0.0)
    est = rp.quotient_estimate(q, 0.05, 2000, 16)
    audit = rp.bound_audit(q, 0.05, est)
    assert audit.details["b_tilde"] == 0.0
    assert not audit.eq10_ok
    assert audit.details["eq10_affine_ok"]


def test_solver_injection_reaches_quotient():
    calls = []

    def spy(*args, **kw):
        calls.append(kw.get("driver") is not None)
        return solve_bsde(*args, **kw)

    rp.quotient_estimate(_query(), 0.05, 500, 8, solve=spy)
    assert calls == [True, False]
