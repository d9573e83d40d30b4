"""Drivers ``g(t, y, z) = g1(t, y, z) * y + g2(t, y, z)`` and their growth audits.

All evaluation rules are vectorized: ``t`` is a scalar or an array of shape
(n,), ``y`` has shape (n,) and ``z`` has shape (n, d). They must be pure.
"""

import difflib
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector
from .exceptions import BadParameters, UnknownGenerator

AUDIT_TOL = 1e-12


def _sq(z):
    return np.sum(np.square(z), axis=-1)


@dataclass(frozen=True)
class AssumptionParams:
    """Growth constants: ``beta <= g1 <= alpha`` and ``|g2| <= |b| + l(|y|) |z|^2``.

    ``l_coeffs`` are the nonnegative polynomial coefficients of the increasing
    function ``l`` (lowest degree first). ``flags`` declares A3, A4 and A5;
    only A5 is ever checked numerically.
    """

    alpha: float
    beta: float
    b: float
    l_coeffs: tuple = (0.0,)
    flags: dict = field(default_factory=lambda: {"A3": False, "A4": False, "A5": False})

    def __post_init__(self):
        if self.beta > self.alpha:
            raise BadParameters(f"beta={self.beta} exceeds alpha={self.alpha}")
        coeffs = tuple(float(c) for c in self.l_coeffs)
        if not coeffs or any(c < 0 for c in coeffs):
            raise BadParameters("l_coeffs must be a nonempty list of nonnegative reals")
        object.__setattr__(self, "l_coeffs", coeffs)
        flags = {"A3": False, "A4": False, "A5": False}
        flags.update({k: bool(v) for k, v in dict(self.flags).items()})
        object.__setattr__(self, "flags", flags)

    def l(self, m):
        m = np.asarray(m, dtype=float)
        return np.polynomial.polynomial.polyval(m, self.l_coeffs)

    def lambda_m(self, m):
        """``max{|alpha|, |beta|, |b|, l(M)}``."""
        return float(max(abs(self.alpha), abs(self.beta), abs(self.b), float(self.l(m))))

    @property
    def alpha_plus(self):
        return max(self.alpha, 0.0)


@dataclass(frozen=True)
class GeneratorSpec:
    name: str
    g1: object
    g2: object
    params: AssumptionParams
    parameters: tuple = ()
    direct: object = None  # optional closed form of g, used to check the decomposition

    def decomposed(self, t, y, z):
        y = np.asarray(y, dtype=float)
        return self.g1(t, y, z) * y + self.g2(t, y, z)

    def __call__(self, t, y, z):
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[0] != y.shape[0]:
            raise ValueError(f"z must have shape (n, d) with n = {y.shape[0]}, got {z.shape}")
        rule = self.direct if self.direct is not None else self.decomposed
        return np.array(np.broadcast_to(rule(t, y, z), y.shape), dtype=float)

    def evaluate_point(self, t, y, z):
        """Scalar evaluation at a single ``(t, y, z)``."""
        z = as_vector(z)
        return float(self(float(t), np.array([float(y)]), z[None, :])[0])

    @property
    def y_independent(self):
        return bool(self.params.flags.get("y_independent", False))


# catalog ------------------------------------------------------------------

def _zero():
    zero = lambda t, y, z: np.zeros(np.shape(y))
    params = AssumptionParams(0.0, 0.0, 0.0, (0.0,), {"A3": True, "A4": True, "A5": True})
    return GeneratorSpec("zero", zero, zero, params, (), direct=lambda t, y, z: np.zeros(np.shape(y)))


def _linear(a, c):
    params = AssumptionParams(a, a, abs(c), (0.0,), {"A3": True, "A4": True, "A5": a == 0.0 and c == 0.0})
    return GeneratorSpec(
        "linear",
        lambda t, y, z: np.full(np.shape(y), a),
        lambda t, y, z: np.full(np.shape(y), c),
        params,
        (a, c),
        direct=lambda t, y, z: a * y + c,
    )


def _pure_quadratic(gamma):
    half = 0.5 * gamma
    params = AssumptionParams(0.0, 0.0, 0.0, (abs(half),), {"A3": True, "A4": True, "A5": True})
    return GeneratorSpec(
        "pure_quadratic",
        lambda t, y, z: np.zeros(np.shape(y)),
        lambda t, y, z: half * _sq(z),
        params,
        (gamma,),
        direct=lambda t, y, z: half * _sq(z),
    )


def _siny_quadratic():
    # d(sin(y)|z|^2)/dy = cos(y)|z|^2 is not dominated by eps|z|^2, so A4 fails.
    params = AssumptionParams(0.0, 0.0, 0.0, (1.0,), {"A3": True, "A4": False, "A5": True})
    return GeneratorSpec(
        "siny_quadratic",
        lambda t, y, z: np.zeros(np.shape(y)),
        lambda t, y, z: np.sin(y) * _sq(z),
        params,
        (),
        direct=lambda t, y, z: np.sin(y) * _sq(z),
    )


def _affine_z(a, c, w):
    # |w z| <= |w|/2 + (|w|/2)|z|^2
    params = AssumptionParams(
        a, a, abs(c) + 0.5 * abs(w), (0.5 * abs(w),),
        {"A3": True, "A4": True, "A5": a == 0.0 and c == 0.0},
    )

    def g2(t, y, z):
        if z.shape[-1] != 1:
            raise BadParameters("affine_z is defined for d = 1 only")
        return w * z[..., 0] + c

    return GeneratorSpec(
        "affine_z",
        lambda t, y, z: np.full(np.shape(y), a),
        g2,
        params,
        (a, c, w),
        direct=lambda t, y, z: a * y + w * z[..., 0] + c,
    )


_CATALOG = {
    "zero": (_zero, 0),
    "linear": (_linear, 2),
    "pure_quadratic": (_pure_quadratic, 1),
    "siny_quadratic": (_siny_quadratic, 0),
    "affine_z": (_affine_z, 3),
}

# y-independence is structural for these entries; used by the translation probe.
_Y_INDEPENDENT = {"zero": lambda p: True, "linear": lambda p: p[0] == 0.0,
                  "pure_quadratic": lambda p: True, "siny_quadratic": lambda p: False,
                  "affine_z": lambda p: p[0] == 0.0}


def catalog_names():
    return sorted(_CATALOG)


def nearest_name(name, names):
    match = difflib.get_close_matches(name, names, n=1, cutoff=0.0)
    return match[0] if match else None


def instantiate_generator(name, parameters=()):
    """Build a catalog generator: zero, linear(a, c), pure_quadratic(gamma),
    siny_quadratic, affine_z(a, c, w)."""
    if name not in _CATALOG:
        hint = nearest_name(name, list(_CATALOG))
        raise UnknownGenerator(f"unknown generator {name!r}; did you mean {hint!r}?")
    factory, n_params = _CATALOG[name]
    parameters = tuple(parameters)
    if len(parameters) != n_params:
        raise BadParameters(f"{name} expects {n_params} parameters, got {len(parameters)}")
    try:
        values = tuple(float(p) for p in parameters)
    except (TypeError, ValueError) as exc:
        raise BadParameters(f"{name}: parameters must be real numbers") from exc
    if not all(np.isfinite(values)):
        raise BadParameters(f"{name}: parameters must be finite")
    spec = factory(*values)
    flags = dict(spec.params.flags)
    flags["y_independent"] = _Y_INDEPENDENT[name](values)
    params = AssumptionParams(spec.params.alpha, spec.params.beta, spec.params.b,
                              spec.params.l_coeffs, flags)
    return GeneratorSpec(spec.name, spec.g1, spec.g2, params, values, spec.direct)


# sampling and audits --------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSample:
    t: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        n = len(self.y)
        if n == 0:
            raise ValueError("sample must be nonempty")
        if np.shape(self.t) != (n,) or self.z.ndim != 2 or self.z.shape[0] != n:
            raise ValueError("inconsistent sample shapes")

    def __len__(self):
        return len(self.y)

    def point(self, i):
        return {"t": float(self.t[i]), "y": float(self.y[i]), "z": [float(v) for v in self.z[i]]}


def make_sample(t, y, z):
    """Full tensor grid of the given t values, y values and z vectors."""
    t = as_vector(t)
    y = as_vector(y)
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    ti, yi, zi = np.meshgrid(np.arange(len(t)), np.arange(len(y)), np.arange(len(z)), indexing="ij")
    return GeneratorSample(t[ti.ravel()], y[yi.ravel()], z[zi.ravel()])


def audit_sample(horizon=1.0, dim=1, n_points=100_000, y_range=10.0, z_range=10.0, seed=0):
    """The standard audit grid: t in {0, T/4, ..., T}, y in [-y_range, y_range],
    z in [-z_range, z_range]^d, with the y = 0 and z = 0 slices always included."""
    rng = np.random.default_rng(seed)
    ts = np.linspace(0.0, horizon, 5)
    n_random = max(n_points - 5 * 41 * 2, 1)
    t = rng.choice(ts, n_random)
    y = rng.uniform(-y_range, y_range, n_random)
    z = rng.uniform(-z_range, z_range, (n_random, dim))
    ys = np.linspace(-y_range, y_range, 41)
    zs = np.linspace(-z_range, z_range, 41)[:, None] * np.ones((1, dim))
    zero_z = make_sample(ts, ys, np.zeros((1, dim)))
    zero_y = make_sample(ts, [0.0], zs)
    return GeneratorSample(
        np.concatenate([t, zero_z.t, zero_y.t]),
        np.concatenate([y, zero_z.y, zero_y.y]),
        np.concatenate([z, zero_z.z, zero_y.z]),
    )


@dataclass
class AuditReport:
    generator: str
    n_points: int
    g1_violation: float
    g2_violation: float
    lambda_violation: float
    lambda_m: float
    m: float
    a5_violation: float
    decomposition_error: float
    l_monotone: bool
    passed: bool
    tolerance: float = AUDIT_TOL
    witnesses: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def check_assumptions(spec, sample, tol=AUDIT_TOL):
    """Audit A2, its lambda_M consequence and (if flagged) A5 on ``sample``."""
    p = spec.params
    t, y, z = sample.t, sample.y, sample.z
    g1 = np.broadcast_to(spec.g1(t, y, z), y.shape)
    g2 = np.broadcast_to(spec.g2(t, y, z), y.shape)
    g = spec(t, y, z)
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2)) and np.all(np.isfinite(g))):
        raise BadParameters(f"{spec.name}: non-finite generator values on the audit sample")
    zz = _sq(z)
    abs_y = np.abs(y)

    v_g1 = np.maximum(np.maximum(g1 - p.alpha, p.beta - g1), 0.0)
    v_g2 = np.maximum(np.abs(g2) - (abs(p.b) + p.l(abs_y) * zz), 0.0)
    m = float(abs_y.max())
    lam = p.lambda_m(m)
    v_lam = np.maximum(np.abs(g) - lam * (1.0 + abs_y + zz), 0.0)
    decomp = np.abs(g - spec.decomposed(t, y, z))

    grid_m = np.linspace(0.0, max(m, 1.0), 257)
    lv = p.l(grid_m)
    l_monotone = bool(lv[0] >= 0 and np.all(np.diff(lv) >= -tol))

    a5 = 0.0
    witnesses = {}
    if p.flags.get("A5"):
        g0 = spec(t, y, np.zeros_like(z))
        a5 = float(np.max(np.abs(g0)))
        if a5 > tol:
            witnesses["A5"] = sample.point(int(np.argmax(np.abs(g0))))
    for key, v in (("g1", v_g1), ("g2", v_g2), ("lambda", v_lam)):
        if v.max() > tol:
            witnesses[key] = sample.point(int(np.argmax(v)))

    report = AuditReport(
        generator=spec.name,
        n_points=len(sample),
        g1_violation=float(v_g1.max()),
        g2_violation=float(v_g2.max()),
        lambda_violation=float(v_lam.max()),
        lambda_m=lam,
        m=m,
        a5_violation=a5,
        decomposition_error=float(decomp.max()),
        l_monotone=l_monotone,
        passed=False,
        tolerance=tol,
        witnesses=witnesses,
    )
    report.passed = bool(
        max(report.g1_violation, report.g2_violation, report.lambda_violation, a5) <= tol
        and l_monotone
    )
    return report


@dataclass
class ComparisonVerdict:
    relation: str  # "a<=b", "a>=b", "equal" or "incomparable"
    max_diff: float  # max of a - b
    min_diff: float  # min of a - b
    witness_a_gt_b: dict = None
    witness_a_lt_b: dict = None

    @property
    def a_le_b(self):
        return self.relation in ("a<=b", "equal")

    @property
    def a_ge_b(self):
        return self.relation in ("a>=b", "equal")


def compare_on_grid(a, b, sample, tol=AUDIT_TOL):
    """Pointwise order of two generators on ``sample`` with worst-point witnesses."""
    diff = a(sample.t, sample.y, sample.z) - b(sample.t, sample.y, sample.z)
    hi, lo = float(diff.max()), float(diff.min())
    w_gt = sample.point(int(np.argmax(diff))) if hi > tol else None
    w_lt = sample.point(int(np.argmin(diff))) if lo < -tol else None
    if w_gt is None and w_lt is None:
        relation = "equal"
    elif w_lt is None:
        relation = "a>=b"
    elif w_gt is None:
        relation = "a<=b"
    else:
        relation = "incomparable"
    return ComparisonVerdict(relation, hi, lo, w_gt, w_lt)
