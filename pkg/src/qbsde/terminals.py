"""Terminal variables of the backward equation and the default test battery."""

import difflib
from dataclasses import dataclass

import numpy as np

from .exceptions import BadParameters, UnknownCatalogEntry


@dataclass(frozen=True)
class PathContext:
    """What a terminal rule may read: stopped states ``X`` (n, N+1, m), stopped
    Brownian values ``B`` (n, N+1, d), the grid and the per-path terminal node."""

    grid: object
    X: np.ndarray
    B: np.ndarray
    terminal_index: np.ndarray

    @property
    def x_terminal(self):
        return self.X[np.arange(self.X.shape[0]), self.terminal_index]

    @property
    def b_terminal(self):
        return self.B[np.arange(self.B.shape[0]), self.terminal_index]

    def b_at(self, t):
        """Brownian value at time ``t`` (stopped at the terminal node)."""
        i = self.grid.index_of(t)
        idx = np.minimum(i, self.terminal_index)
        return self.B[np.arange(self.B.shape[0]), idx]


@dataclass(frozen=True)
class TerminalFunctional:
    """``rule(ctx) -> (n,)`` terminal values.

    ``bound`` is the declared sup norm (``None``: taken from the sample).
    ``uses_brownian`` adds the Brownian value to the regression state when it
    is not already a function of ``X``. ``features(ctx, i)`` may return extra
    regression columns known at node ``i`` (or ``None``).
    """

    name: str
    rule: object
    bound: float = None
    uses_brownian: bool = False
    features: object = None

    def evaluate(self, ctx):
        values = np.asarray(self.rule(ctx), dtype=float)
        if values.shape != (ctx.X.shape[0],):
            raise BadParameters(f"terminal {self.name!r} returned shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise BadParameters(f"terminal {self.name!r} returned non-finite values")
        if self.bound is not None and np.max(np.abs(values)) > self.bound * (1 + 1e-12) + 1e-300:
            raise BadParameters(
                f"terminal {self.name!r} exceeds its declared bound {self.bound}: "
                f"max |xi| = {np.max(np.abs(values))}"
            )
        return values

    def shifted(self, c, name=None):
        """``xi + c`` with the same features."""
        bound = None if self.bound is None else self.bound + abs(c)
        return TerminalFunctional(name or f"{self.name}{c:+g}", lambda ctx: self.rule(ctx) + c,
                                  bound, self.uses_brownian, self.features)


def brownian(scale=1.0):
    name = "brownian" if scale == 1.0 else f"brownian*{scale:g}"
    return TerminalFunctional(name, lambda ctx: scale * ctx.b_terminal[:, 0], None, True)


def abs_capped(cap=2.0):
    return TerminalFunctional("abs_capped", lambda ctx: np.minimum(np.abs(ctx.b_terminal[:, 0]), cap),
                              abs(cap), True)


def cosine():
    return TerminalFunctional("cos", lambda ctx: np.cos(ctx.b_terminal[:, 0]), 1.0, True)


def smooth_step(width=0.1):
    """Smoothed indicator of ``B_T > 0``."""
    return TerminalFunctional("smooth_step", lambda ctx: 0.5 * (1.0 + np.tanh(ctx.b_terminal[:, 0] / width)),
                              1.0, True)


def constant(c=0.0):
    return TerminalFunctional("constant", lambda ctx: np.full(ctx.X.shape[0], c), abs(c), False)


def state_linear(y=0.0, q=(1.0,), x=None):
    """``y + q . (X_terminal - x)``; ``x`` defaults to the start state."""
    q = np.atleast_1d(np.asarray(q, dtype=float))

    def rule(ctx):
        x0 = ctx.X[:, 0, :] if x is None else np.asarray(x, dtype=float)
        return y + (ctx.x_terminal - x0) @ q

    return TerminalFunctional("state_linear", rule, None, False)


_TERMINALS = {
    "brownian": (brownian, (0, 1)),
    "abs_capped": (abs_capped, (0, 1)),
    "cos": (cosine, (0,)),
    "smooth_step": (smooth_step, (0, 1)),
    "constant": (constant, (1,)),
}


def terminal_names():
    return sorted(_TERMINALS)


def instantiate_terminal(name, parameters=()):
    if name not in _TERMINALS:
        hint = difflib.get_close_matches(name, list(_TERMINALS), n=1, cutoff=0.0)
        raise UnknownCatalogEntry(f"unknown terminal {name!r}; did you mean {hint[0]!r}?")
    factory, arities = _TERMINALS[name]
    if len(parameters) not in arities:
        raise BadParameters(f"terminal {name} accepts {arities} parameters, got {len(parameters)}")
    return factory(*[float(p) for p in parameters])


def default_battery():
    """``B_T``, ``|B_T| ^ 2``, ``cos(B_T)`` and a smoothed ``1{B_T > 0}``."""
    return [brownian(), abs_capped(2.0), cosine(), smooth_step(0.1)]
