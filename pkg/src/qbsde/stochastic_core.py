"""Time grids and seeded Brownian increment batches.

Every random quantity in the package is derived from a :class:`PathBundle`,
so a run is a pure function of its configuration and master seed.

Substream rule: path ``k`` of stream ``s`` under master seed ``m`` is drawn
from a Philox4x64 counter-based generator with key ``(m, k)`` and initial
counter ``(0, 0, 0, s)``. Each path consumes ``n_steps * dim`` standard
normals in (step, component) row-major order, so adding paths never changes
the draws of existing ones.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._validation import check_positive_int
from .exceptions import DegenerateInterval, ZeroSteps

_U64 = 2**64


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``start = t_0 < t_1 < ... < t_n = end``."""

    start: float
    end: float
    n_steps: int

    @property
    def step(self):
        return (self.end - self.start) / self.n_steps

    @property
    def length(self):
        return self.end - self.start

    def node(self, i):
        if not 0 <= i <= self.n_steps:
            raise IndexError(f"node index {i} outside 0..{self.n_steps}")
        if i == self.n_steps:
            return self.end
        return self.start + i * self.step

    @property
    def nodes(self):
        t = self.start + np.arange(self.n_steps + 1) * self.step
        t[-1] = self.end
        return t

    def index_of(self, t, atol=1e-12):
        """Index of the node equal to ``t`` (within ``atol``)."""
        i = int(round((t - self.start) / self.step))
        if not 0 <= i <= self.n_steps or abs(self.node(i) - t) > atol * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a node of {self}")
        return i


def make_grid(start, end, n_steps, horizon=None):
    """Build a :class:`TimeGrid` after checking the interval and step count.

    ``horizon``, when given, is the configured maximal time ``T``; the grid
    must end no later than it.
    """
    if isinstance(n_steps, bool) or int(n_steps) != n_steps or n_steps < 1:
        raise ZeroSteps(f"n_steps must be a positive integer, got {n_steps!r}")
    start, end = float(start), float(end)
    if not start < end:
        raise DegenerateInterval(f"empty interval [{start}, {end}]")
    if horizon is not None and end > horizon:
        raise DegenerateInterval(f"grid end {end} exceeds horizon {horizon}")
    return TimeGrid(start, end, int(n_steps))


@dataclass(frozen=True)
class RngPolicy:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or not 0 <= v < _U64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {v!r}")

    def path_generator(self, k):
        bit_gen = np.random.Philox(
            key=np.array([self.master_seed, k], dtype=np.uint64),
            counter=np.array([0, 0, 0, self.stream_id], dtype=np.uint64),
        )
        return np.random.Generator(bit_gen)

    def spawn(self, stream_id):
        return RngPolicy(self.master_seed, stream_id)

    def standard_normals(self, n_paths, n_draws):
        """Array (n_paths, n_draws) of N(0, 1) draws, one substream per row."""
        return _standard_normals(int(self.master_seed), int(self.stream_id), int(n_paths), int(n_draws))


@lru_cache(maxsize=8)
def _standard_normals(master_seed, stream_id, n_paths, n_draws):
    policy = RngPolicy(master_seed, stream_id)
    out = np.empty((n_paths, n_draws))
    for k in range(n_paths):
        out[k] = policy.path_generator(k).standard_normal(n_draws)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PathBundle:
    """Brownian increments ``increments[path, step, component]``."""

    grid: TimeGrid
    n_paths: int
    dim: int
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = (self.n_paths, self.grid.n_steps, self.dim)
        if self.increments.shape != expected:
            raise ValueError(f"increments shape {self.increments.shape} != {expected}")

    def brownian(self):
        """Brownian values at the grid nodes, shape (n_paths, n_steps + 1, dim)."""
        out = np.zeros((self.n_paths, self.grid.n_steps + 1, self.dim))
        np.cumsum(self.increments, axis=1, out=out[:, 1:, :])
        return out

    def on_grid(self, grid):
        """Same normalized draws rescaled onto another grid with equal step count."""
        if grid.n_steps != self.grid.n_steps:
            raise ValueError("on_grid requires an equal number of steps")
        inc = self.increments * np.sqrt(grid.step / self.grid.step)
        inc.flags.writeable = False
        return PathBundle(grid, self.n_paths, self.dim, inc)

    def truncated(self, n_steps):
        """Bundle restricted to the first ``n_steps`` steps of the grid."""
        grid = make_grid(self.grid.start, self.grid.node(n_steps), n_steps)
        inc = self.increments[:, :n_steps, :]
        return PathBundle(grid, self.n_paths, self.dim, inc)


def sample_brownian(grid, n_paths, dim, rng):
    """Sample ``n_paths`` independent ``dim``-dimensional Brownian increment paths on ``grid``."""
    n_paths = check_positive_int(n_paths, "n_paths")
    dim = check_positive_int(dim, "dim")
    if isinstance(rng, (int, np.integer)):
        rng = RngPolicy(int(rng))
    z = rng.standard_normals(n_paths, grid.n_steps * dim)
    inc = z.reshape(n_paths, grid.n_steps, dim) * np.sqrt(grid.step)
    inc.flags.writeable = False
    return PathBundle(grid, n_paths, dim, inc)
