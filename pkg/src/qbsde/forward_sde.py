"""Euler-Maruyama simulation of the forward diffusion and discrete first exits."""

import difflib
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector, check_positive_int
from .exceptions import BadParameters, CapTooSmall, DimensionMismatch, UnknownCatalogEntry

COEFF_TOL = 1e-10


@dataclass(frozen=True)
class SdeCoefficients:
    """``drift(t, x) -> (n, m)`` and ``diffusion(t, x) -> (n, m, d)`` for ``x`` of shape (n, m).

    ``mu`` and ``nu`` are the declared Lipschitz and linear-growth constants,
    with the Frobenius norm used for the diffusion matrix.
    """

    name: str
    drift: object
    diffusion: object
    mu: float
    nu: float
    m: int
    d: int
    parameters: tuple = ()
    zero_drift: bool = False
    identity_diffusion: bool = False


def _const_drift(value, m):
    vec = np.broadcast_to(as_vector(value), (m,)).astype(float)
    return lambda t, x: np.broadcast_to(vec, x.shape).copy()


def _scaled_identity(scale, m):
    eye = scale * np.eye(m)
    return lambda t, x: np.broadcast_to(eye, (x.shape[0], m, m)).copy()


def zero_drift_unit_diffusion(dim=1):
    dim = check_positive_int(dim, "dim")
    return SdeCoefficients(
        "zero_drift_unit_diffusion", _const_drift(0.0, dim), _scaled_identity(1.0, dim),
        mu=0.0, nu=float(np.sqrt(dim)), m=dim, d=dim, parameters=(),
        zero_drift=True, identity_diffusion=True,
    )


def ou(theta=1.0, vol=1.0, dim=1):
    """Ornstein-Uhlenbeck: ``drift = -theta x``, ``diffusion = vol I``."""
    dim = check_positive_int(dim, "dim")
    return SdeCoefficients(
        "ou", lambda t, x: -theta * x, _scaled_identity(vol, dim),
        mu=abs(theta), nu=max(abs(theta), abs(vol) * np.sqrt(dim)), m=dim, d=dim,
        parameters=(theta, vol),
    )


def scaled_linear(a_b, a_sigma, dim=1):
    """``drift = a_b x``, ``diffusion = a_sigma diag(x)``."""
    dim = check_positive_int(dim, "dim")

    def diffusion(t, x):
        out = np.zeros((x.shape[0], dim, dim))
        idx = np.arange(dim)
        out[:, idx, idx] = a_sigma * x
        return out

    k = abs(a_b) + abs(a_sigma)
    return SdeCoefficients("scaled_linear", lambda t, x: a_b * x, diffusion,
                           mu=k, nu=k, m=dim, d=dim, parameters=(a_b, a_sigma))


def constant(drift=0.0, vol=1.0, dim=1):
    """``drift = drift * 1``, ``diffusion = vol I``."""
    dim = check_positive_int(dim, "dim")
    nu = abs(drift) * np.sqrt(dim) + abs(vol) * np.sqrt(dim)
    return SdeCoefficients(
        "constant", _const_drift(drift, dim), _scaled_identity(vol, dim),
        mu=0.0, nu=float(nu), m=dim, d=dim, parameters=(drift, vol),
        zero_drift=drift == 0.0, identity_diffusion=vol == 1.0,
    )


def frozen(dim=1):
    dim = check_positive_int(dim, "dim")
    return SdeCoefficients("frozen", _const_drift(0.0, dim), _scaled_identity(0.0, dim),
                           mu=0.0, nu=0.0, m=dim, d=dim, parameters=(), zero_drift=True)


_COEFF_CATALOG = {
    "zero_drift_unit_diffusion": (zero_drift_unit_diffusion, (0,)),
    "ou": (ou, (0, 1, 2)),
    "scaled_linear": (scaled_linear, (2,)),
    "constant": (constant, (0, 1, 2)),
    "frozen": (frozen, (0,)),
}


def coefficient_names():
    return sorted(_COEFF_CATALOG)


def instantiate_coefficients(name, parameters=(), dim=1):
    if name not in _COEFF_CATALOG:
        hint = difflib.get_close_matches(name, list(_COEFF_CATALOG), n=1, cutoff=0.0)
        raise UnknownCatalogEntry(f"unknown sde coefficients {name!r}; did you mean {hint[0]!r}?")
    factory, arities = _COEFF_CATALOG[name]
    if len(parameters) not in arities:
        raise BadParameters(f"{name} accepts {arities} parameters, got {len(parameters)}")
    return factory(*[float(p) for p in parameters], dim=dim)


@dataclass
class CoefficientAudit:
    mu_violation: float
    nu_violation: float
    passed: bool


def audit_coefficients(coeffs, t, x, x_other, tol=COEFF_TOL):
    """Empirical check of the declared Lipschitz (mu) and growth (nu) constants
    on sampled pairs ``(t, x)``, ``(t, x_other)``; ``x`` arrays have shape (n, m)."""
    b1, b2 = coeffs.drift(t, x), coeffs.drift(t, x_other)
    s1, s2 = coeffs.diffusion(t, x), coeffs.diffusion(t, x_other)
    lip = np.linalg.norm(b1 - b2, axis=1) + np.linalg.norm((s1 - s2).reshape(len(x), -1), axis=1)
    dist = np.linalg.norm(x - x_other, axis=1)
    growth = np.linalg.norm(b1, axis=1) + np.linalg.norm(s1.reshape(len(x), -1), axis=1)
    v_mu = float(np.max(lip - coeffs.mu * dist))
    v_nu = float(np.max(growth - coeffs.nu * (1.0 + np.linalg.norm(x, axis=1))))
    return CoefficientAudit(max(v_mu, 0.0), max(v_nu, 0.0), v_mu <= tol and v_nu <= tol)


@dataclass(frozen=True)
class StatePaths:
    grid: object
    start_state: np.ndarray
    values: np.ndarray = field(repr=False)  # (n_paths, n_steps + 1, m)

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[2]

    def at(self, index):
        """State at node ``index``; ``index`` may be an int or a per-path int array."""
        if np.ndim(index) == 0:
            return self.values[:, int(index), :]
        return self.values[np.arange(self.n_paths), np.asarray(index), :]


@dataclass(frozen=True)
class ExitTimes:
    cap: float
    horizon_index: int
    exit_index: np.ndarray
    capped: np.ndarray

    @property
    def capped_fraction(self):
        return float(np.mean(self.capped))


def simulate_euler(coeffs, start_time, start_state, bundle):
    """Euler-Maruyama paths ``X(i+1) = X(i) + b h + sigma dB`` from ``(start_time, start_state)``."""
    grid = bundle.grid
    if abs(grid.start - start_time) > 1e-12 * max(1.0, abs(start_time)):
        raise DimensionMismatch(f"bundle grid starts at {grid.start}, not {start_time}")
    x0 = as_vector(start_state, "start_state")
    if x0.shape[0] != coeffs.m:
        raise DimensionMismatch(f"start_state has dimension {x0.shape[0]}, coefficients expect {coeffs.m}")
    if bundle.dim != coeffs.d:
        raise DimensionMismatch(f"bundle dimension {bundle.dim} != diffusion columns {coeffs.d}")
    n, h = bundle.n_paths, grid.step
    times = grid.nodes
    out = np.empty((n, grid.n_steps + 1, coeffs.m))
    out[:, 0, :] = x0
    x = out[:, 0, :]
    for i in range(grid.n_steps):
        db = bundle.increments[:, i, :]
        if coeffs.identity_diffusion:
            noise = db
        else:
            noise = np.einsum("nmd,nd->nm", coeffs.diffusion(times[i], x), db)
        if coeffs.zero_drift:
            x = x + noise
        else:
            x = x + coeffs.drift(times[i], x) * h + noise
        out[:, i + 1, :] = x
    out.flags.writeable = False
    return StatePaths(grid, x0, out)


def first_exit(paths, cap):
    """First node whose state norm strictly exceeds ``cap``, clamped to the horizon."""
    cap = float(cap)
    if np.linalg.norm(paths.start_state) >= cap:
        raise CapTooSmall(f"cap {cap} must exceed |x| = {np.linalg.norm(paths.start_state)}")
    n_steps = paths.grid.n_steps
    over = np.linalg.norm(paths.values, axis=2) > cap
    over[:, 0] = False
    capped = over.any(axis=1)
    exit_index = np.where(capped, np.argmax(over, axis=1), n_steps)
    return ExitTimes(cap, n_steps, exit_index.astype(np.int64), capped)


def stop_paths(paths, exit_times):
    """Paths held at their exit value from the exit node onward."""
    idx = np.arange(paths.grid.n_steps + 1)[None, :]
    take = np.minimum(idx, exit_times.exit_index[:, None])
    values = np.take_along_axis(paths.values, take[:, :, None], axis=1)
    values.flags.writeable = False
    return StatePaths(paths.grid, paths.start_state, values)
