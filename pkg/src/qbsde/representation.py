"""Difference-quotient studies of the generator representation.

For a start point ``(t, x)``, level ``y`` and direction ``q`` the quotient

    (Y_t - y) / eps,   Y solving (g, t + eps ^ tau, y + q . (X_{t+eps^tau} - x))

tends to ``g(t, y, sigma^T(t, x) q) + q . b(t, x)`` as ``eps -> 0``. Here ``tau``
is the first exit of ``X`` from the ball of radius ``C0``.

The default route solves for the shifted pair

    Yt = Y - (y + q . (X - x)),   Zt = Z - sigma^T(X) q

which has zero terminal value and driver
``g(r, Yt + y + q . (X_r - x), Zt + sigma^T(X_r) q) + q . b(r, X_r)``. Under the
Euler scheme this is algebraically the same discrete problem. It avoids the
``O(1/sqrt(eps))`` variance of the raw quotient. ``route="direct"`` solves the
unshifted problem instead, as a cross-check.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector, check_finite_real, check_positive_int
from .bsde_solver import RegressionConfig, solve_bsde
from .exceptions import BadParameters, DimensionMismatch, LadderTooCoarse, QbsdeError
from .forward_sde import first_exit, simulate_euler, stop_paths
from .generators import AssumptionParams
from .stochastic_core import RngPolicy, make_grid, sample_brownian
from .terminals import constant, state_linear

ROUTES = ("transformed", "direct")
BOUND_SLACK = 1.2
# z_energy values at or below this are treated as exactly zero when fitting slopes
ENERGY_FLOOR = 1e-300


@dataclass(frozen=True)
class RepresentationQuery:
    """Start point ``(t, x)``, level ``y``, direction ``q`` and exit radius ``C0``.

    ``C0`` defaults to ``|x| + 5``.
    """

    t: float
    y: float
    x: object
    q: object
    gen: object
    coeffs: object
    C0: float = None
    horizon: float = 1.0

    def __post_init__(self):
        x = as_vector(self.x, "x")
        q = as_vector(self.q, "q")
        if x.shape != (self.coeffs.m,) or q.shape != (self.coeffs.m,):
            raise DimensionMismatch(f"x and q must have dimension m = {self.coeffs.m}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "y", check_finite_real(self.y, "y"))
        t = check_finite_real(self.t, "t")
        if not 0.0 <= t < self.horizon:
            raise BadParameters(f"t must lie in [0, {self.horizon}), got {t}")
        object.__setattr__(self, "t", t)
        c0 = float(np.linalg.norm(x)) + 5.0 if self.C0 is None else check_finite_real(self.C0, "C0")
        if not c0 > np.linalg.norm(x):
            raise BadParameters(f"C0 = {c0} must exceed |x| = {np.linalg.norm(x)}")
        object.__setattr__(self, "C0", c0)

    def target(self):
        """``g(t, y, sigma^T(t, x) q) + q . b(t, x)``."""
        xs = self.x[None, :]
        sigma = self.coeffs.diffusion(self.t, xs)[0]
        drift = self.coeffs.drift(self.t, xs)[0]
        z = sigma.T @ self.q
        return float(self.gen.evaluate_point(self.t, self.y, z) + self.q @ drift)


@dataclass(frozen=True)
class EpsilonLadder:
    """Strictly decreasing ``eps_1 > ... > eps_K`` with ``substeps`` grid steps
    inside each ``[t, t + eps]`` (an int, or one per rung)."""

    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    substeps: object = 64

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 3:
            raise BadParameters(f"a ladder needs at least 3 rungs, got {len(eps)}")
        if not all(e > 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise BadParameters(f"ladder must be strictly decreasing and positive: {eps}")
        if eps[-1] / eps[0] > 0.25:
            raise BadParameters(f"ladder span eps_K / eps_1 = {eps[-1] / eps[0]:.3g} exceeds 1/4")
        subs = self.substeps
        subs = (subs,) * len(eps) if np.ndim(subs) == 0 else tuple(subs)
        if len(subs) != len(eps):
            raise BadParameters("substeps must be an int or one count per rung")
        subs = tuple(check_positive_int(s, "substeps") for s in subs)
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "substeps", subs)

    def __len__(self):
        return len(self.epsilons)

    def check_fits(self, query):
        room = query.horizon - query.t
        if self.epsilons[0] > room + 1e-12:
            raise BadParameters(f"eps = {self.epsilons[0]} exceeds T - t = {room}")


def bias_budget(eps, step):
    """Allowance for the discretization bias of the extrapolated quotient."""
    return 0.5 * eps + 2.0 * step


@dataclass
class QuotientEstimate:
    eps: float
    quotient_mean: float
    quotient_se: float
    z_energy: float
    sup_tildeY: float
    capped_fraction: float
    pathwise: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)


def _transformed_driver(query, paths, times):
    gen, coeffs = query.gen, query.coeffs
    Xt = np.ascontiguousarray(paths.values.transpose(1, 0, 2))
    q, x, y = query.q, query.x, query.y

    def driver(i, rows, ytil, ztil):
        X = Xt[i, rows]
        sigma = coeffs.diffusion(times[i], X)
        shift_z = np.einsum("nmd,m->nd", sigma, q)
        level = ytil + y + (X - x) @ q
        return gen(times[i], level, ztil + shift_z) + coeffs.drift(times[i], X) @ q

    return driver


def _affine_level(query):
    """Sup of ``|y + q . (X - x)|`` over the stopped state."""
    return abs(query.y) + float(np.linalg.norm(query.q)) * (query.C0 + float(np.linalg.norm(query.x)))


def _shifted_params(query, eps):
    """Growth constants of the shifted driver, including its affine part."""
    p = query.gen.params
    b = b_tilde(query, eps) + max(abs(p.alpha), abs(p.beta)) * _affine_level(query)
    return AssumptionParams(p.alpha, p.beta, b, p.l_coeffs, dict(p.flags))


def _sigma_q(query, paths):
    """``sigma^T(s, X_s) q`` per path and node, shape (n, N+1, d)."""
    times = paths.grid.nodes
    n, N1, m = paths.values.shape
    out = np.empty((n, N1, query.coeffs.d))
    for i in range(N1):
        out[:, i] = np.einsum("nmd,m->nd", query.coeffs.diffusion(times[i], paths.values[:, i]), query.q)
    return out


def quotient_estimate(query, eps, n_paths=50_000, substeps=64, cfg=None, seed=0, route="transformed",
                      zero_terminal=True, solve=solve_bsde):
    """Estimate ``(Y_t - y) / eps`` with its standard error and shifted-pair diagnostics.

    ``zero_terminal`` additionally solves ``(g, t + eps ^ tau, 0)`` on the same
    paths for the zero-terminal band. ``solve`` is the backward solver.
    """
    if route not in ROUTES:
        raise BadParameters(f"route must be one of {ROUTES}, got {route!r}")
    eps = check_finite_real(eps, "eps")
    if not 0 < eps <= query.horizon - query.t + 1e-12:
        raise BadParameters(f"eps = {eps} must lie in (0, T - t = {query.horizon - query.t}]")
    cfg = cfg or RegressionConfig()
    grid = make_grid(query.t, query.t + eps, substeps)
    bundle = sample_brownian(grid, n_paths, query.coeffs.d, RngPolicy(seed))
    raw = simulate_euler(query.coeffs, query.t, query.x, bundle)
    exits = first_exit(raw, query.C0)
    h = grid.step
    alive = np.arange(grid.n_steps + 1)[None, :] < exits.exit_index[:, None]
    # drivers read the state stopped at the exit node
    paths = stop_paths(raw, exits)
    level = state_linear(query.y, query.q, query.x)

    if route == "transformed":
        sol = solve(query.gen, constant(0.0), paths, bundle, exits, cfg,
                    driver=_transformed_driver(query, paths, grid.nodes), driver_params=_shifted_params(query, eps))
        ytil, ztil = sol.Y, sol.Z
        quotient_path = sol.pathwise / eps
        quotient = sol.y0 / eps
    else:
        sol = solve(query.gen, level, paths, bundle, exits, cfg)
        ytil = sol.Y - (query.y + (paths.values - query.x) @ query.q)
        ztil = sol.Z - _sigma_q(query, paths) * alive[:, :, None]
        quotient_path = (sol.pathwise - query.y) / eps
        quotient = (sol.y0 - query.y) / eps

    live_z = ztil[:, :-1] * alive[:, :-1, None]
    z_energy = float(h * np.sum(live_z ** 2) / n_paths)
    sup_tilde = float(np.max(np.abs(ytil)))
    se = float(np.std(quotient_path, ddof=1) / np.sqrt(n_paths))
    diagnostics = dict(sol.diagnostics)
    diagnostics.update(route=route, step=h, n_paths=n_paths, substeps=int(substeps))
    if zero_terminal:
        zsol = solve(query.gen, constant(0.0), paths, bundle, exits, cfg)
        diagnostics["sup_y_zero_terminal"] = float(np.max(np.abs(zsol.Y)))
    return QuotientEstimate(eps, float(quotient), se, z_energy, sup_tilde, exits.capped_fraction,
                            quotient_path, diagnostics)


def _loglog_slope(eps, values):
    values = np.asarray(values, dtype=float)
    if np.any(values <= ENERGY_FLOOR):
        return None
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


@dataclass
class RepresentationReport:
    query: object
    ladder: object
    estimates: list
    target: float
    extrapolated_limit: float
    z_energy_slope: float
    sup_tildeY_slope: float
    c_fit: float
    l1_errors: list
    l2_errors: list
    tolerance: float
    verdict: bool

    @property
    def raw_limit(self):
        """The smallest-eps quotient, without extrapolation."""
        return self.estimates[-1].quotient_mean

    @property
    def max_capped_fraction(self):
        return max(e.capped_fraction for e in self.estimates)

    def energy_bound_ok(self, slack=1.5):
        """``z_energy(eps) <= slack * C_fit * eps^2`` on every rung."""
        return all(e.z_energy <= slack * self.c_fit * e.eps ** 2 + ENERGY_FLOOR for e in self.estimates)

    def rows(self):
        """One record per rung, in ladder order."""
        return [
            {
                "epsilon": e.eps,
                "quotient_mean": e.quotient_mean,
                "quotient_se": e.quotient_se,
                "target": self.target,
                "abs_err": abs(e.quotient_mean - self.target),
                "z_energy": e.z_energy,
                "sup_tildeY": e.sup_tildeY,
                "capped_fraction": e.capped_fraction,
            }
            for e in self.estimates
        ]


def limit_study(query, ladder=None, n_paths=50_000, cfg=None, seed=0, route="transformed",
                zero_terminal=True, solve=solve_bsde):
    """Quotients over an eps-ladder with common random numbers, Richardson limit and verdict.

    Every rung with the same substep count reuses one set of normal draws
    rescaled to its own grid.
    """
    ladder = ladder or EpsilonLadder()
    ladder.check_fits(query)
    estimates = []
    for eps, sub in zip(ladder.epsilons, ladder.substeps):
        try:
            est = quotient_estimate(query, eps, n_paths, sub, cfg, seed, route, zero_terminal, solve)
        except (QbsdeError, ArithmeticError, ValueError) as exc:
            raise LadderTooCoarse(f"rung eps = {eps} failed: {exc}") from exc
        estimates.append(est)

    eps = np.array(ladder.epsilons)
    target = query.target()
    q_prev, q_last = estimates[-2].quotient_mean, estimates[-1].quotient_mean
    r = eps[-2] / eps[-1]
    extrapolated = (r * q_last - q_prev) / (r - 1.0)
    z = [e.z_energy for e in estimates]
    sup = [e.sup_tildeY for e in estimates]
    c_fit = z[0] / eps[0] ** 2
    l1 = [float(np.mean(np.abs(e.pathwise - target))) for e in estimates]
    l2 = [float(np.sqrt(np.mean((e.pathwise - target) ** 2))) for e in estimates]
    last = estimates[-1]
    tol = 3.0 * last.quotient_se + bias_budget(last.eps, last.diagnostics["step"])
    return RepresentationReport(
        query=query, ladder=ladder, estimates=estimates, target=target,
        extrapolated_limit=float(extrapolated),
        z_energy_slope=_loglog_slope(eps, z), sup_tildeY_slope=_loglog_slope(eps, sup),
        c_fit=float(c_fit), l1_errors=l1, l2_errors=l2, tolerance=float(tol),
        verdict=bool(abs(extrapolated - target) <= tol),
    )


def b_tilde(query, eps):
    """Growth constant of the shifted driver::

        |b| + 2 |q|^2 nu^2 (1 + C0)^2 l(2 M + 1) + |q| nu (1 + C0)

    with ``M = ||Y|| + ||y + q . (X - x)||`` from the a-priori band on ``[t, t + eps]``.
    """
    p, nu, c0 = query.gen.params, query.coeffs.nu, query.C0
    qn = float(np.linalg.norm(query.q))
    level = _affine_level(query)
    m_tilde = (level + abs(p.b) * eps) * np.exp(p.alpha_plus * eps) + level
    return float(abs(p.b) + 2.0 * qn ** 2 * nu ** 2 * (1.0 + c0) ** 2 * p.l(2.0 * m_tilde + 1.0)
                 + qn * nu * (1.0 + c0))


@dataclass
class BoundAudit:
    eq3_ok: bool
    eq10_ok: bool
    details: dict


def _margin(bound, value):
    if value == 0.0:
        return float("inf")
    return float(bound / value)


def bound_audit(query, eps, diagnostics, slack=BOUND_SLACK):
    """Check the zero-terminal band ``|b| eps e^{alpha+ eps}`` and the shifted band
    ``b_tilde eps e^{alpha+ eps}`` against measured sups.

    ``diagnostics`` needs ``sup_tildeY`` and, for the zero-terminal check,
    ``sup_y_zero_terminal``; a :class:`QuotientEstimate` is accepted directly.
    """
    if isinstance(diagnostics, QuotientEstimate):
        diagnostics = dict(diagnostics.diagnostics, sup_tildeY=diagnostics.sup_tildeY)
    p = query.gen.params
    growth = eps * np.exp(p.alpha_plus * eps)
    bt = b_tilde(query, eps)
    bound10 = bt * growth
    bound3 = abs(p.b) * growth
    sup_tilde = float(diagnostics["sup_tildeY"])
    sup_zero = diagnostics.get("sup_y_zero_terminal")
    # the affine part g1 . (y + q . (X - x)) of the shifted driver is not covered by b_tilde
    bound10_affine = (bt + max(abs(p.alpha), abs(p.beta)) * _affine_level(query)) * growth
    fp = 1e-12
    eq10_ok = sup_tilde <= slack * bound10 + fp
    eq3_ok = sup_zero is None or sup_zero <= slack * bound3 + fp
    details = {
        "b_tilde": bt,
        "bound10": float(bound10),
        "sup_tildeY": sup_tilde,
        "margin10": _margin(slack * bound10, sup_tilde),
        "bound10_affine": float(bound10_affine),
        "eq10_affine_ok": bool(sup_tilde <= slack * bound10_affine + fp),
        "bound3": float(bound3),
        "sup_y_zero_terminal": sup_zero,
        "margin3": None if sup_zero is None else _margin(slack * bound3, sup_zero),
        "slack": slack,
    }
    return BoundAudit(bool(eq3_ok), bool(eq10_ok), details)
