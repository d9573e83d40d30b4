"""Backward regression scheme for quadratic BSDEs and two closed-form oracles.

The scheme on a uniform grid with step ``h``::

    Y_N = xi
    Z_i = E[(Y_{i+1} - E[Y_{i+1} | S_i]) dB_i / h | S_i]     (truncated to |Z_i| <= z_max)
    Y_i = E[Y_{i+1} | S_i] + h g(t_i, Y_i, Z_i)               (Picard iteration, explicit fallback)

where ``S_i`` is the regression state at node ``i`` and every conditional
expectation is a least-squares projection. Subtracting the fitted mean inside
the Z-regression leaves its conditional expectation unchanged and removes
most of its variance.

Stopped problems absorb each path at its exit node: ``Y`` stays at the
terminal value and ``Z = 0`` from there on.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import BadParameters, DimensionMismatch, PicardDiverged, RankDeficientWarning
from .regression import ConditionalExpectationRegressor
from .terminals import PathContext

BAND_SLACK = 1e-6


@dataclass(frozen=True)
class RegressionConfig:
    basis_degree: int = 2
    z_max: float = None  # None: 10 * (1 + ||xi||_inf)
    picard_tol: float = 1e-10
    picard_max_iters: int = 50
    clip_y: bool = False

    def __post_init__(self):
        if int(self.basis_degree) != self.basis_degree or self.basis_degree < 0:
            raise BadParameters(f"basis_degree must be a nonnegative integer, got {self.basis_degree}")
        if self.z_max is not None and not self.z_max > 0:
            raise BadParameters(f"z_max must be positive, got {self.z_max}")
        if not self.picard_tol > 0:
            raise BadParameters(f"picard_tol must be positive, got {self.picard_tol}")
        if int(self.picard_max_iters) != self.picard_max_iters or self.picard_max_iters < 1:
            raise BadParameters(f"picard_max_iters must be >= 1, got {self.picard_max_iters}")


@dataclass
class BsdeSolution:
    grid: object
    Y: np.ndarray  # (n_paths, N + 1)
    Z: np.ndarray  # (n_paths, N + 1, d); Z at node N is 0
    xi: np.ndarray
    pathwise: np.ndarray  # xi + sum_i h g(t_i, Y_i, Z_i), one estimate of Y_0 per path
    alive: np.ndarray  # (n_paths, N + 1) True while the path is not absorbed
    diagnostics: dict = field(default_factory=dict)

    @property
    def y0(self):
        return float(self.Y[0, 0])

    @property
    def y0_se(self):
        n = len(self.pathwise)
        return float(np.std(self.pathwise, ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    def mean_y(self):
        return self.Y.mean(axis=0)

    def se_y(self):
        n = self.Y.shape[0]
        return self.Y.std(axis=0, ddof=1) / np.sqrt(n)

    @property
    def trusted(self):
        return self.diagnostics.get("truncation_hits", 0) == 0


def make_context(paths, bundle, exit_times=None):
    """Stopped states and Brownian values with the per-path terminal node."""
    if paths.grid != bundle.grid:
        raise DimensionMismatch("paths and bundle must share one grid")
    n_steps = paths.grid.n_steps
    B = bundle.brownian()
    X = paths.values
    if exit_times is None:
        idx = np.full(paths.n_paths, n_steps, dtype=np.int64)
    else:
        idx = np.asarray(exit_times.exit_index, dtype=np.int64)
        take = np.minimum(np.arange(n_steps + 1)[None, :], idx[:, None])
        X = np.take_along_axis(X, take[:, :, None], axis=1)
        B = np.take_along_axis(B, take[:, :, None], axis=1)
    return PathContext(paths.grid, X, B, idx)


class _StateBuilder:
    """Regression state at node i: X_i, plus B_i when needed, plus terminal features."""

    def __init__(self, ctx, terminal):
        self.ctx = ctx
        self.terminal = terminal
        self.add_b = False
        if terminal.uses_brownian:
            X, B = ctx.X, ctx.B
            same = X.shape == B.shape and np.allclose(X - X[:, :1, :], B, rtol=0.0, atol=1e-9)
            self.add_b = not same
        self._X = np.ascontiguousarray(ctx.X.transpose(1, 0, 2))
        self._B = np.ascontiguousarray(ctx.B.transpose(1, 0, 2)) if self.add_b else None

    def at(self, i, rows=slice(None)):
        cols = [self._X[i, rows]]
        if self.add_b:
            cols.append(self._B[i, rows])
        if self.terminal.features is not None:
            extra = self.terminal.features(self.ctx, i)
            if extra is not None:
                extra = np.asarray(extra, dtype=float)
                cols.append((extra[:, None] if extra.ndim == 1 else extra)[rows])
        return np.concatenate(cols, axis=1)


def a_priori_band(params, xi_bound, horizon):
    """``(||xi||_inf + |b| T) exp(alpha^+ T)`` for growth constants ``params``."""
    p = params
    return (xi_bound + abs(p.b) * horizon) * np.exp(p.alpha_plus * horizon)


class BsdeSolver(BaseEstimator):
    """Regression-based backward solver for ``(g, T, xi)``.

    ``fit(paths, bundle, terminal, exit_times=None)`` runs the backward scheme
    and stores the result in ``solution_``. A path-dependent ``driver(i, rows,
    y, z)`` may replace ``generator(t_i, y, z)``; ``driver_params`` then
    supplies the growth constants for the a-priori band.
    """

    def __init__(self, generator=None, basis_degree=2, z_max=None, picard_tol=1e-10,
                 picard_max_iters=50, clip_y=False):
        self.generator = generator
        self.basis_degree = basis_degree
        self.z_max = z_max
        self.picard_tol = picard_tol
        self.picard_max_iters = picard_max_iters
        self.clip_y = clip_y

    @classmethod
    def from_config(cls, generator, cfg):
        return cls(generator, cfg.basis_degree, cfg.z_max, cfg.picard_tol, cfg.picard_max_iters, cfg.clip_y)

    def fit(self, paths, bundle, terminal, exit_times=None, driver=None, driver_params=None):
        if self.generator is None and driver is None:
            raise BadParameters("BsdeSolver needs a generator or a driver")
        cfg = RegressionConfig(self.basis_degree, self.z_max, self.picard_tol, self.picard_max_iters, self.clip_y)
        gen = self.generator
        ctx = make_context(paths, bundle, exit_times)
        grid = paths.grid
        n, N, d, h = paths.n_paths, grid.n_steps, bundle.dim, grid.step
        times = grid.nodes

        xi = terminal.evaluate(ctx)
        xi_bound = terminal.bound if terminal.bound is not None else float(np.max(np.abs(xi)))
        band = a_priori_band(driver_params or gen.params, xi_bound, grid.length)
        if driver is None:
            driver = lambda i, rows, y, z: gen(times[i], y, z)
        z_max = cfg.z_max if cfg.z_max is not None else 10.0 * (1.0 + xi_bound)
        states = _StateBuilder(ctx, terminal)

        # time-major work arrays: one contiguous row per node
        Yt = np.empty((N + 1, n))
        Zt = np.zeros((N + 1, n, d))
        dBt = np.ascontiguousarray(bundle.increments.transpose(1, 0, 2))
        alive = np.arange(N + 1)[None, :] < ctx.terminal_index[:, None]
        all_alive = bool(alive[:, :N].all())
        Yt[N] = xi
        drift_sum = np.zeros(n)
        picard_iters = np.zeros(N, dtype=np.int64)
        residuals = np.zeros(N)
        truncation_hits = clip_hits = raw_violations = rank_deficient = unconverged = 0
        n_alive_total = 0

        for i in range(N - 1, -1, -1):
            if all_alive:
                rows = slice(None)
                n_live = n
                Yt[i] = Yt[i + 1]
            else:
                live = alive[:, i]
                Yt[i] = Yt[i + 1]
                rows = np.flatnonzero(live)
                n_live = rows.size
                if n_live == 0:
                    continue
            n_alive_total += n_live
            S = states.at(i, rows)
            target = Yt[i + 1, rows]
            reg = ConditionalExpectationRegressor(cfg.basis_degree).fit(S, target)
            cond = reg.fitted_
            residuals[i] = reg.residual_
            dB = dBt[i, rows]
            z = reg.project((target - cond)[:, None] * dB / h)
            rank_deficient += reg.rank_deficient_

            norms = np.linalg.norm(z, axis=1)
            over = norms > z_max
            if over.any():
                truncation_hits += int(over.sum())
                z[over] *= (z_max / norms[over])[:, None]

            y, it, stuck = self._picard(driver, i, rows, cond, z, h, cfg, band)
            picard_iters[i] = it
            unconverged += int(stuck.size)

            raw_violations += int(np.sum(np.abs(y) > band + BAND_SLACK))
            if cfg.clip_y:
                clipped = np.clip(y, -band, band)
                clip_hits += int(np.sum(clipped != y))
                y = clipped
            Yt[i, rows] = y
            Zt[i, rows] = z
            drift_sum[rows] += h * driver(i, rows, y, z)

        Y = np.ascontiguousarray(Yt.T)
        Z = np.ascontiguousarray(Zt.transpose(1, 0, 2))
        if rank_deficient:
            warnings.warn(f"{rank_deficient} rank-deficient regressions; ridge penalty applied",
                          RankDeficientWarning, stacklevel=2)

        self.solution_ = BsdeSolution(
            grid=grid, Y=Y, Z=Z, xi=xi, pathwise=xi + drift_sum, alive=alive,
            diagnostics={
                "picard_iters": picard_iters,
                "picard_unconverged": unconverged,
                "truncation_hits": truncation_hits,
                "regression_residual": residuals,
                "clip_hits": clip_hits,
                "band": float(band),
                "band_violations_raw": raw_violations,
                "band_violation_fraction": raw_violations / max(n_alive_total, 1),
                "rank_deficient_regressions": int(rank_deficient),
                "xi_bound": float(xi_bound),
                "z_max": float(z_max),
            },
        )
        return self

    @staticmethod
    def _picard(driver, i, rows, cond, z, h, cfg, band):
        """Solve ``y = cond + h g(y, z)`` per path by fixed-point iteration.

        Only paths that have not yet converged are iterated. Paths still
        moving after ``picard_max_iters`` (the map is not a contraction when
        ``h |dg/dy|`` exceeds 1) take the explicit value ``cond + h g(cond, z)``.
        Returns the values, the iteration count and the unconverged positions.
        """
        y = cond + h * driver(i, rows, cond, z)
        explicit = y.copy()
        active = np.arange(y.size)
        limit = 10.0 * band + 1.0 if np.isfinite(band) else np.inf
        it = 1
        while it < cfg.picard_max_iters:
            it += 1
            sub = active if isinstance(rows, slice) else rows[active]
            y_new = cond[active] + h * driver(i, sub, y[active], z[active])
            delta = np.abs(y_new - y[active])
            y[active] = y_new
            if not np.all(np.isfinite(y_new)) or np.max(np.abs(y_new)) > limit:
                raise PicardDiverged(f"Picard iterates left 10x the a-priori band {band:.4g} at node {i}")
            active = active[delta > cfg.picard_tol]
            if active.size == 0:
                return y, it, active
        y[active] = explicit[active]
        return y, it, active

    def predict(self, node=0):
        """Per-path ``Y`` at ``node``."""
        check_is_fitted(self, "solution_")
        return self.solution_.Y[:, node]


def solve_bsde(gen, terminal, paths, bundle, exit_times=None, cfg=None, driver=None, driver_params=None):
    """Solve ``(g, T, xi)`` (stopped at ``exit_times`` when given); returns a :class:`BsdeSolution`."""
    cfg = cfg or RegressionConfig()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        solver = BsdeSolver.from_config(gen, cfg)
        return solver.fit(paths, bundle, terminal, exit_times, driver, driver_params).solution_


@dataclass
class OracleValues:
    Y: np.ndarray  # (n_paths, N + 1)
    se: np.ndarray  # (N + 1,)
    diagnostics: dict = field(default_factory=dict)

    @property
    def y0(self):
        return float(self.Y[0, 0])

    @property
    def y0_se(self):
        return float(self.se[0])


def _project(values, states, i, rows, degree):
    S = states.at(i, rows)
    reg = ConditionalExpectationRegressor(degree).fit(S, values[rows])
    return reg.fitted_, reg.residual_


def solve_colehopf(gamma, terminal, paths, bundle, exit_times=None, basis_degree=2):
    """Oracle for ``g = (gamma / 2)|z|^2``: ``Y_t = ln E[exp(gamma xi) | F_t] / gamma``.

    Each node regresses ``exp(gamma xi)`` directly on the state (no backward
    chaining); node 0 is a plain sample mean.
    """
    if gamma == 0:
        raise BadParameters("gamma must be nonzero")
    ctx = make_context(paths, bundle, exit_times)
    states = _StateBuilder(ctx, terminal)
    xi = terminal.evaluate(ctx)
    n, N = paths.n_paths, paths.grid.n_steps
    w = np.exp(gamma * xi)
    Y = np.empty((n, N + 1))
    se = np.zeros(N + 1)
    Y[:, N] = xi
    nonpositive = 0
    alive = np.arange(N + 1)[None, :] < ctx.terminal_index[:, None]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        for i in range(N - 1, -1, -1):
            live = alive[:, i]
            Y[~live, i] = xi[~live]
            rows = np.flatnonzero(live)
            if rows.size == 0:
                continue
            fit, resid = _project(w, states, i, rows, basis_degree)
            bad = fit <= 0
            nonpositive += int(bad.sum())
            fit = np.where(bad, np.min(w), fit)
            Y[rows, i] = np.log(fit) / gamma
            se[i] = resid / (np.sqrt(rows.size) * abs(gamma) * float(np.mean(fit)))
    m = float(np.mean(w))
    se[0] = float(np.std(w, ddof=1) / (np.sqrt(n) * abs(gamma) * m))
    Y[:, 0] = np.log(m) / gamma
    return OracleValues(Y, se, {"nonpositive_fits": nonpositive})


def solve_linear_oracle(a, c, w, terminal, paths, bundle, basis_degree=2):
    """Oracle for ``g = a y + w z + c`` with d = 1::

        Y_t = exp(a (T - t)) E[xi L_T / L_t | F_t] + (c / a)(exp(a (T - t)) - 1)

    with ``L_t = exp(w B_t - w^2 t / 2)``; the last term is ``c (T - t)`` when a = 0.
    """
    if bundle.dim != 1:
        raise DimensionMismatch("the linear oracle is defined for d = 1")
    ctx = make_context(paths, bundle)
    states = _StateBuilder(ctx, terminal)
    xi = terminal.evaluate(ctx)
    grid = paths.grid
    n, N = paths.n_paths, grid.n_steps
    B = ctx.B[:, :, 0]
    tau = grid.end - grid.nodes
    growth = np.exp(a * tau)
    shift = c * tau if a == 0 else (c / a) * (growth - 1.0)
    Y = np.empty((n, N + 1))
    se = np.zeros(N + 1)
    Y[:, N] = xi
    rows = np.arange(n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        for i in range(N - 1, -1, -1):
            weighted = xi * np.exp(w * (B[:, N] - B[:, i]) - 0.5 * w * w * tau[i])
            if i == 0:
                cond = np.full(n, weighted.mean())
                se[0] = growth[0] * float(np.std(weighted, ddof=1)) / np.sqrt(n)
            else:
                cond, resid = _project(weighted, states, i, rows, basis_degree)
                se[i] = growth[i] * resid / np.sqrt(n)
            Y[:, i] = growth[i] * cond + shift[i]
    return OracleValues(Y, se)
