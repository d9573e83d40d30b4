import numpy as np
import pytest

from oracles import pde_value
from qbsde import forward_sde as fs
from qbsde import terminals as tm
from qbsde.bsde_solver import (BsdeSolver, RegressionConfig, a_priori_band, solve_bsde, solve_colehopf,
                               solve_linear_oracle)
from qbsde.exceptions import BadParameters, PicardDiverged
from qbsde.generators import instantiate_generator
from qbsde.stochastic_core import make_grid, sample_brownian


def _brownian_paths(n_paths=20_000, n_steps=32, seed=1, horizon=1.0):
    bundle = sample_brownian(make_grid(0.0, horizon, n_steps), n_paths, 1, seed)
    return bundle, fs.simulate_euler(fs.zero_drift_unit_diffusion(), 0.0, [0.0], bundle)


@pytest.fixture(scope="module")
def bm():
    return _brownian_paths()


def test_linear_closed_form(bm):
    bundle, paths = bm
    sol = solve_bsde(instantiate_generator("linear", (-1, 1)), tm.constant(0.0), paths, bundle)
    # implicit scheme: y_i = (y_{i+1} + h) / (1 + h)
    h, y = bundle.grid.step, 0.0
    for _ in range(bundle.grid.n_steps):
        y = (y + h) / (1 + h)
    assert sol.y0 == pytest.approx(y, abs=1e-9)  # Picard tolerance 1e-10 per node
    assert abs(sol.y0 - (1 - np.exp(-1))) < 0.02
    assert sol.diagnostics["band_violation_fraction"] == 0.0


def test_zero_generator_is_sample_mean(bm):
    bundle, paths = bm
    xi = tm.abs_capped(2.0)
    sol = solve_bsde(instantiate_generator("zero"), xi, paths, bundle)
    assert sol.y0 == pytest.approx(sol.xi.mean(), abs=1e-12)
    assert np.array_equal(sol.pathwise, sol.xi)


def test_colehopf_agreement(bm):
    bundle, paths = bm
    sol = solve_bsde(instantiate_generator("pure_quadratic", (1,)), tm.brownian(), paths, bundle)
    ch = solve_colehopf(1.0, tm.brownian(), paths, bundle)
    assert abs(sol.y0 - 0.5) < 3 * sol.y0_se + 0.02
    assert abs(ch.y0 - 0.5) < 3 * ch.y0_se + 0.01
    assert abs(sol.y0 - ch.y0) < 0.05
    # interior nodes: regression oracle and solver agree on average
    i = bundle.grid.n_steps // 2
    assert abs(sol.Y[:, i].mean() - ch.Y[:, i].mean()) < 0.02


@pytest.mark.parametrize("c", [-1.5, 0.0, 2.0])
def test_constant_terminal_exact_under_a5(bm, c):
    bundle, paths = bm
    for name, params in (("pure_quadratic", (1,)), ("siny_quadratic", ())):
        sol = solve_bsde(instantiate_generator(name, params), tm.constant(c), paths, bundle)
        assert np.max(np.abs(sol.Y - c)) < 1e-12
        assert np.max(np.abs(sol.Z)) < 1e-12


def test_affine_z_against_girsanov(bm):
    bundle, paths = bm
    a, c, w = 0.5, 0.2, 0.8
    sol = solve_bsde(instantiate_generator("affine_z", (a, c, w)), tm.brownian(), paths, bundle)
    oracle = solve_linear_oracle(a, c, w, tm.brownian(), paths, bundle)
    exact = np.exp(a) * w + (c / a) * (np.exp(a) - 1)
    assert abs(oracle.y0 - exact) < 3 * oracle.y0_se + 0.01
    assert abs(sol.y0 - oracle.y0) < 3 * (sol.y0_se + oracle.y0_se) + 0.02


def test_siny_against_pde():
    bundle, paths = _brownian_paths(n_paths=20_000, n_steps=64, seed=4)
    gen = instantiate_generator("siny_quadratic")
    sol = solve_bsde(gen, tm.cosine(), paths, bundle, cfg=RegressionConfig(basis_degree=5))
    ref = pde_value(lambda t, u, ux: np.sin(u) * ux ** 2, np.cos)
    assert abs(sol.y0 - ref) < 3 * sol.y0_se + 0.02


def test_stopped_solution_is_expected_exit_time(bm):
    bundle, paths = bm
    exits = fs.first_exit(paths, 0.7)
    sol = solve_bsde(instantiate_generator("linear", (0, 1)), tm.constant(0.0), paths, bundle, exits)
    expected = exits.exit_index * bundle.grid.step
    assert np.allclose(sol.pathwise, expected)
    assert abs(sol.y0 - expected.mean()) < 3 * expected.std() / np.sqrt(len(expected)) + 0.01
    capped = np.flatnonzero(exits.capped)[:20]
    for k in capped:
        assert np.all(sol.Y[k, exits.exit_index[k]:] == 0.0)


def test_a_priori_band():
    p = instantiate_generator("linear", (0.5, 2.0)).params
    assert a_priori_band(p, 1.0, 2.0) == pytest.approx((1.0 + 2.0 * 2.0) * np.exp(1.0))
    p = instantiate_generator("linear", (-3.0, 0.0)).params
    assert a_priori_band(p, 1.5, 1.0) == pytest.approx(1.5)


def test_picard_divergence_raises(bm):
    bundle, paths = bm
    zero = instantiate_generator("zero")
    with pytest.raises(PicardDiverged):
        solve_bsde(zero, tm.constant(1.0), paths, bundle, driver=lambda i, rows, y, z: 1e3 * y,
                   driver_params=zero.params)


def test_picard_fallback_is_reported(bm):
    bundle, paths = bm
    zero = instantiate_generator("zero")
    h = bundle.grid.step
    sol = solve_bsde(zero, tm.constant(0.5), paths, bundle, driver=lambda i, rows, y, z: -2.0 / h * np.tanh(y),
                     driver_params=zero.params)
    assert sol.diagnostics["picard_unconverged"] > 0
    assert np.all(np.isfinite(sol.Y))


def test_estimator_api(bm):
    bundle, paths = bm
    gen = instantiate_generator("pure_quadratic", (1,))
    solver = BsdeSolver(gen, basis_degree=3)
    assert solver.get_params()["basis_degree"] == 3
    solver.fit(paths, bundle, tm.brownian())
    assert solver.predict(0)[0] == solver.solution_.y0
    with pytest.raises(BadParameters):
        BsdeSolver().fit(paths, bundle, tm.brownian())


def test_regression_config_validation():
    with pytest.raises(BadParameters):
        RegressionConfig(basis_degree=-1)
    with pytest.raises(BadParameters):
        RegressionConfig(z_max=0.0)
    with pytest.raises(BadParameters):
        RegressionConfig(picard_max_iters=0)


def test_z_truncation_counts(bm):
    bundle, paths = bm
    gen = instantiate_generator("pure_quadratic", (1,))
    sol = solve_bsde(gen, tm.brownian(), paths, bundle, cfg=RegressionConfig(z_max=0.5))
    assert sol.diagnostics["truncation_hits"] > 0
    assert not sol.trusted
    assert np.max(np.linalg.norm(sol.Z, axis=2)) <= 0.5 + 1e-12


def test_clip_option(bm):
    bundle, paths = bm
    gen = instantiate_generator("pure_quadratic", (1,))
    sol = solve_bsde(gen, tm.brownian(), paths, bundle, cfg=RegressionConfig(clip_y=True))
    band = sol.diagnostics["band"]
    assert np.max(np.abs(sol.Y[:, :-1])) <= band
