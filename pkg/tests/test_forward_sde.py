import numpy as np
import pytest

from qbsde import forward_sde as fs
from qbsde.exceptions import BadParameters, CapTooSmall, DimensionMismatch, UnknownCatalogEntry
from qbsde.stochastic_core import PathBundle, make_grid, sample_brownian


def _bundle(n_paths=2000, n_steps=32, dim=1, seed=0, start=0.0, end=1.0):
    return sample_brownian(make_grid(start, end, n_steps), n_paths, dim, seed)


def test_constant_coefficients_are_exact():
    bundle = _bundle(dim=2)
    paths = fs.simulate_euler(fs.constant(0.5, 2.0, dim=2), 0.0, [1.0, -1.0], bundle)
    expected = np.array([1.0, -1.0]) + 0.5 * bundle.grid.nodes[None, :, None] + 2.0 * bundle.brownian()
    assert np.allclose(paths.values, expected, atol=1e-12)


def test_identity_path_is_brownian():
    bundle = _bundle()
    paths = fs.simulate_euler(fs.zero_drift_unit_diffusion(), 0.0, [0.0], bundle)
    assert np.allclose(paths.values, bundle.brownian())


def test_ou_weak_order_one():
    # antithetic pairs cancel the noise exactly for a linear drift, leaving the scheme's own mean
    errors = []
    for n_steps in (8, 16, 32, 64):
        bundle = _bundle(n_paths=200, n_steps=n_steps)
        mirror = PathBundle(bundle.grid, bundle.n_paths, 1, -bundle.increments)
        coeffs = fs.ou(theta=1.5, vol=0.7)
        a = fs.simulate_euler(coeffs, 0.0, [2.0], bundle).values[:, -1, 0]
        b = fs.simulate_euler(coeffs, 0.0, [2.0], mirror).values[:, -1, 0]
        errors.append(abs(0.5 * (a + b).mean() - 2.0 * np.exp(-1.5)))
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    assert np.all((ratios > 1.7) & (ratios < 2.3)), ratios


def test_scaled_linear_mean():
    bundle = _bundle(n_paths=20_000, n_steps=64, seed=3)
    paths = fs.simulate_euler(fs.scaled_linear(0.3, 0.2), 0.0, [1.0], bundle)
    xT = paths.values[:, -1, 0]
    assert abs(xT.mean() - np.exp(0.3)) < 5 * xT.std() / np.sqrt(len(xT)) + 0.01


def test_start_time_and_dimension_checks():
    bundle = _bundle()
    with pytest.raises(DimensionMismatch):
        fs.simulate_euler(fs.ou(), 0.5, [0.0], bundle)
    with pytest.raises(DimensionMismatch):
        fs.simulate_euler(fs.ou(), 0.0, [0.0, 1.0], bundle)
    with pytest.raises(DimensionMismatch):
        fs.simulate_euler(fs.ou(dim=2), 0.0, [0.0, 1.0], bundle)


def test_first_exit_is_strict_and_clamped():
    bundle = _bundle(n_paths=3000)
    paths = fs.simulate_euler(fs.zero_drift_unit_diffusion(), 0.0, [0.0], bundle)
    exits = fs.first_exit(paths, 1.0)
    norms = np.abs(paths.values[:, :, 0])
    for k in range(200):
        i = exits.exit_index[k]
        assert np.all(norms[k, 1:i] <= 1.0)
        if exits.capped[k]:
            assert norms[k, i] > 1.0
        else:
            assert i == bundle.grid.n_steps
    assert 0.0 < exits.capped_fraction < 1.0


def test_cap_must_exceed_start():
    paths = fs.simulate_euler(fs.zero_drift_unit_diffusion(), 0.0, [1.0], _bundle())
    with pytest.raises(CapTooSmall):
        fs.first_exit(paths, 1.0)


def test_stop_paths_holds_exit_value():
    paths = fs.simulate_euler(fs.zero_drift_unit_diffusion(), 0.0, [0.0], _bundle(n_paths=500))
    exits = fs.first_exit(paths, 0.8)
    stopped = fs.stop_paths(paths, exits)
    for k in np.flatnonzero(exits.capped)[:50]:
        i = exits.exit_index[k]
        assert np.all(stopped.values[k, i:] == paths.values[k, i])
        assert np.array_equal(stopped.values[k, : i + 1], paths.values[k, : i + 1])


@pytest.mark.parametrize("coeffs", [fs.ou(1.3, 0.4, dim=2), fs.scaled_linear(0.5, -0.7, dim=2),
                                    fs.constant(1.0, 2.0, dim=2), fs.zero_drift_unit_diffusion(2)])
def test_declared_constants_hold(coeffs):
    rng = np.random.default_rng(0)
    x, y = rng.normal(0, 5, (2000, 2)), rng.normal(0, 5, (2000, 2))
    assert fs.audit_coefficients(coeffs, 0.0, x, y).passed


def test_audit_detects_understated_constants():
    good = fs.ou(2.0, 1.0)
    bad = fs.SdeCoefficients("ou", good.drift, good.diffusion, mu=0.5, nu=0.5, m=1, d=1)
    rng = np.random.default_rng(0)
    audit = fs.audit_coefficients(bad, 0.0, rng.normal(0, 3, (500, 1)), rng.normal(0, 3, (500, 1)))
    assert not audit.passed
    assert audit.mu_violation > 0 and audit.nu_violation > 0


def test_catalog_lookup():
    assert fs.instantiate_coefficients("ou", (2.0,)).parameters == (2.0, 1.0)
    with pytest.raises(UnknownCatalogEntry, match="ou"):
        fs.instantiate_coefficients("ouu")
    with pytest.raises(BadParameters):
        fs.instantiate_coefficients("scaled_linear", (1.0,))
