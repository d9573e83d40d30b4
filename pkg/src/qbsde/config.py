"""Experiment configuration: a TOML document validated into :class:`ExperimentConfig`.

Grammar (every key optional; defaults shown)::

    schema_version = 1
    master_seed = 0
    horizon = 1.0
    n_steps = 64
    n_paths = 50000
    output_dir = "qbsde-out"

    [generator]                 # catalog name and positional parameters
    name = "zero"
    params = []

    [generator2]                # second generator for paired probes (optional)
    name = "pure_quadratic"
    params = [1.0]

    [sde]
    name = "zero_drift_unit_diffusion"
    params = []
    dim = 1
    x0 = [0.0]

    [terminal]
    name = "brownian"
    params = []

    [bsde]
    basis_degree = 2
    z_max = "auto"              # or a positive number
    picard_tol = 1e-10
    picard_max_iters = 50
    clip_y = false

    [represent]
    t = [0.0]
    y = 0.0
    x = [0.0]
    q = [1.0]
    C0 = "auto"                 # |x| + 5, or a number > |x|
    epsilons = [0.2, 0.1, 0.05, 0.025]
    substeps = 64
    route = "transformed"       # or "direct"
    bound_slack = 1.2

    [properties]
    theorems = ["4.2", "4.3", "5.3"]
    eval_times = [0.0, 0.5]
    hypothesis = "g1<=g2"
    y_values = [-2.0, -0.5, 0.0, 1.0, 3.0]
    shifts = [-1.0, 0.5, 2.0]
    sigma = 0.5
    bias = 0.02
    separation_bias = 0.03
    evidence = true
    evidence_paths = 4000
"""

import copy
import difflib
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import QbsdeError
from .forward_sde import coefficient_names, instantiate_coefficients
from .generators import catalog_names, instantiate_generator
from .terminals import instantiate_terminal, terminal_names

SCHEMA_VERSION = 1
THEOREM_IDS = ("4.1", "4.2", "4.3", "5.1", "5.2", "5.3", "consistency-24-25")
PAIRED_THEOREMS = ("4.1", "5.1", "5.2")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "master_seed": 0,
    "horizon": 1.0,
    "n_steps": 64,
    "n_paths": 50_000,
    "output_dir": "qbsde-out",
    "generator": {"name": "zero", "params": []},
    "sde": {"name": "zero_drift_unit_diffusion", "params": [], "dim": 1, "x0": [0.0]},
    "terminal": {"name": "brownian", "params": []},
    "bsde": {"basis_degree": 2, "z_max": "auto", "picard_tol": 1e-10, "picard_max_iters": 50, "clip_y": False},
    "represent": {
        "t": [0.0], "y": 0.0, "x": [0.0], "q": [1.0], "C0": "auto",
        "epsilons": [0.2, 0.1, 0.05, 0.025], "substeps": 64, "route": "transformed", "bound_slack": 1.2,
    },
    "properties": {
        "theorems": ["4.2", "4.3", "5.3"], "eval_times": [0.0, 0.5], "hypothesis": "g1<=g2",
        "y_values": [-2.0, -0.5, 0.0, 1.0, 3.0], "shifts": [-1.0, 0.5, 2.0], "sigma": 0.5,
        "bias": 0.02, "separation_bias": 0.03, "evidence": True, "evidence_paths": 4000,
    },
}
OPTIONAL_TABLES = ("generator2",)


class ParseError(QbsdeError, ValueError):
    """The text is not valid TOML."""

    def __init__(self, message, line=None, column=None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ValidationError(QbsdeError, ValueError):
    """All problems found in a parsed config, each as ``(key_path, message)``."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.errors))

    @property
    def keys(self):
        return [k for k, _ in self.errors]


class ExperimentConfig:
    """Validated config tree with every default materialized.

    ``data`` is the full plain-dict echo; catalog objects are built on demand.
    """

    def __init__(self, data):
        self.data = data

    def __getitem__(self, key):
        return self.data[key]

    def as_dict(self):
        return copy.deepcopy(self.data)

    def with_overrides(self, seed=None, output_dir=None):
        data = self.as_dict()
        if seed is not None:
            data["master_seed"] = int(seed)
        if output_dir is not None:
            data["output_dir"] = str(output_dir)
        return validate(data)

    def generator(self, which="generator"):
        g = self.data.get(which)
        return None if g is None else instantiate_generator(g["name"], tuple(g["params"]))

    def coefficients(self):
        s = self.data["sde"]
        return instantiate_coefficients(s["name"], tuple(s["params"]), s["dim"])

    def terminal(self):
        t = self.data["terminal"]
        return instantiate_terminal(t["name"], tuple(t["params"]))

    def regression(self):
        from .bsde_solver import RegressionConfig

        b = self.data["bsde"]
        z_max = None if b["z_max"] == "auto" else b["z_max"]
        return RegressionConfig(b["basis_degree"], z_max, b["picard_tol"], b["picard_max_iters"], b["clip_y"])


def _merge(defaults, given, path, errors):
    out = {}
    for key, value in given.items():
        if key not in defaults:
            hint = difflib.get_close_matches(key, list(defaults), n=1)
            more = f"; did you mean {hint[0]!r}?" if hint else ""
            errors.append((f"{path}{key}", f"unknown key{more}"))
    for key, default in defaults.items():
        if key not in given:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            if not isinstance(given[key], dict):
                errors.append((f"{path}{key}", "must be a table"))
                out[key] = copy.deepcopy(default)
            else:
                out[key] = _merge(default, given[key], f"{path}{key}.", errors)
        else:
            out[key] = given[key]
    return out


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _num_list(v):
    return isinstance(v, list) and all(_is_num(x) for x in v)


def _check_catalog(table, path, names, build, errors):
    name = table.get("name")
    params = table.get("params")
    if not isinstance(name, str):
        errors.append((f"{path}.name", "must be a string"))
        return
    if not _num_list(params):
        errors.append((f"{path}.params", "must be a list of numbers"))
        return
    if name not in names:
        hint = difflib.get_close_matches(name, names, n=1, cutoff=0.0)
        errors.append((f"{path}.name", f"unknown {path} {name!r}; nearest catalog match: {hint[0]!r}"))
        return
    try:
        build(name, tuple(params))
    except (QbsdeError, ValueError, TypeError) as exc:
        errors.append((f"{path}.params", str(exc)))


def validate(raw):
    """Materialize defaults and check every field; raises :class:`ValidationError` listing all problems."""
    errors = []
    given = dict(raw)
    extra = {k: given.pop(k) for k in OPTIONAL_TABLES if k in given}
    data = _merge(DEFAULTS, given, "", errors)

    if data["schema_version"] != SCHEMA_VERSION:
        errors.append(("schema_version", f"unsupported schema version {data['schema_version']!r}; expected {SCHEMA_VERSION}"))
    seed = data["master_seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        errors.append(("master_seed", "must be an integer in [0, 2^64)"))
    if not _is_num(data["horizon"]) or not data["horizon"] > 0:
        errors.append(("horizon", "must be a positive number"))
    for key, lo in (("n_steps", 1), ("n_paths", 1)):
        v = data[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < lo:
            errors.append((key, f"must be an integer >= {lo}"))
    if not isinstance(data["output_dir"], str) or not data["output_dir"]:
        errors.append(("output_dir", "must be a non-empty string"))

    _check_catalog(data["generator"], "generator", catalog_names(), instantiate_generator, errors)
    if "generator2" in extra:
        g2 = _merge(DEFAULTS["generator"], extra["generator2"], "generator2.", errors) \
            if isinstance(extra["generator2"], dict) else None
        if g2 is None:
            errors.append(("generator2", "must be a table"))
        else:
            data["generator2"] = g2
            _check_catalog(g2, "generator2", catalog_names(), instantiate_generator, errors)
    _check_catalog(data["terminal"], "terminal", terminal_names(), instantiate_terminal, errors)

    sde = data["sde"]
    dim_ok = isinstance(sde["dim"], int) and not isinstance(sde["dim"], bool) and sde["dim"] >= 1
    if not dim_ok:
        errors.append(("sde.dim", "must be an integer >= 1"))
    else:
        _check_catalog(sde, "sde", coefficient_names(),
                       lambda n, p: instantiate_coefficients(n, p, sde["dim"]), errors)
        if not _num_list(sde["x0"]) or len(sde["x0"]) != sde["dim"]:
            errors.append(("sde.x0", f"must be a list of {sde['dim']} numbers"))

    b = data["bsde"]
    if not isinstance(b["basis_degree"], int) or isinstance(b["basis_degree"], bool) or not 0 <= b["basis_degree"] <= 8:
        errors.append(("bsde.basis_degree", "must be an integer in [0, 8]"))
    if not (b["z_max"] == "auto" or (_is_num(b["z_max"]) and b["z_max"] > 0)):
        errors.append(("bsde.z_max", "must be \"auto\" or a positive number"))
    if not _is_num(b["picard_tol"]) or not b["picard_tol"] > 0:
        errors.append(("bsde.picard_tol", "must be a positive number"))
    if not isinstance(b["picard_max_iters"], int) or isinstance(b["picard_max_iters"], bool) or b["picard_max_iters"] < 1:
        errors.append(("bsde.picard_max_iters", "must be an integer >= 1"))
    if not isinstance(b["clip_y"], bool):
        errors.append(("bsde.clip_y", "must be true or false"))

    _validate_represent(data, errors, dim_ok)
    _validate_properties(data, errors)
    if errors:
        raise ValidationError(errors)
    return ExperimentConfig(data)


def _validate_represent(data, errors, dim_ok):
    r = data["represent"]
    horizon = data["horizon"] if _is_num(data["horizon"]) else 1.0
    if not _num_list(r["t"]) or not r["t"] or any(not 0 <= t < horizon for t in r["t"]):
        errors.append(("represent.t", f"must be a non-empty list of times in [0, {horizon})"))
    if not _is_num(r["y"]):
        errors.append(("represent.y", "must be a number"))
    dim = data["sde"]["dim"] if dim_ok else None
    for key in ("x", "q"):
        if not _num_list(r[key]) or (dim is not None and len(r[key]) != dim):
            errors.append((f"represent.{key}", f"must be a list of {dim} numbers"))
    if r["C0"] != "auto":
        if not _is_num(r["C0"]):
            errors.append(("represent.C0", "must be \"auto\" or a number"))
        elif _num_list(r["x"]) and r["C0"] <= sum(v * v for v in r["x"]) ** 0.5:
            errors.append(("represent.C0", "must exceed |x|"))
    eps = r["epsilons"]
    if not _num_list(eps) or len(eps) < 3:
        errors.append(("represent.epsilons", "must list at least 3 numbers"))
    elif any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])) or eps[-1] / eps[0] > 0.25:
        errors.append(("represent.epsilons", "must be positive, strictly decreasing, with eps_K / eps_1 <= 1/4"))
    elif _num_list(r["t"]) and r["t"] and eps[0] > horizon - max(r["t"]) + 1e-12:
        errors.append(("represent.epsilons", "largest eps exceeds T - t"))
    if not isinstance(r["substeps"], int) or isinstance(r["substeps"], bool) or r["substeps"] < 1:
        errors.append(("represent.substeps", "must be an integer >= 1"))
    if r["route"] not in ("transformed", "direct"):
        errors.append(("represent.route", "must be \"transformed\" or \"direct\""))
    if not _is_num(r["bound_slack"]) or r["bound_slack"] < 1:
        errors.append(("represent.bound_slack", "must be a number >= 1"))


def _validate_properties(data, errors):
    p = data["properties"]
    horizon = data["horizon"] if _is_num(data["horizon"]) else 1.0
    th = p["theorems"]
    if not isinstance(th, list) or not th:
        errors.append(("properties.theorems", "must be a non-empty list"))
    else:
        for i, t in enumerate(th):
            if t not in THEOREM_IDS:
                hint = difflib.get_close_matches(str(t), THEOREM_IDS, n=1, cutoff=0.0)
                errors.append((f"properties.theorems[{i}]", f"unknown theorem {t!r}; nearest: {hint[0]!r}"))
        if any(t in PAIRED_THEOREMS for t in th) and "generator2" not in data:
            errors.append(("generator2", "required by theorems " + ", ".join(PAIRED_THEOREMS)))
    if not _num_list(p["eval_times"]) or any(not 0 <= t <= horizon for t in p["eval_times"]):
        errors.append(("properties.eval_times", f"must be a list of times in [0, {horizon}]"))
    if p["hypothesis"] not in ("g1<=g2", "g1>=g2"):
        errors.append(("properties.hypothesis", "must be \"g1<=g2\" or \"g1>=g2\""))
    for key in ("y_values", "shifts"):
        if not _num_list(p[key]) or not p[key]:
            errors.append((f"properties.{key}", "must be a non-empty list of numbers"))
    if not _is_num(p["sigma"]) or not 0 < p["sigma"] <= horizon:
        errors.append(("properties.sigma", f"must lie in (0, {horizon}]"))
    for key in ("bias", "separation_bias"):
        if not _is_num(p[key]) or p[key] < 0:
            errors.append((f"properties.{key}", "must be a nonnegative number"))
    if not isinstance(p["evidence"], bool):
        errors.append(("properties.evidence", "must be true or false"))
    if not isinstance(p["evidence_paths"], int) or isinstance(p["evidence_paths"], bool) or p["evidence_paths"] < 100:
        errors.append(("properties.evidence_paths", "must be an integer >= 100"))


def parse_config(text):
    """Parse and validate TOML ``text``; raises :class:`ParseError` or :class:`ValidationError`."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(getattr(exc, "msg", str(exc)), getattr(exc, "lineno", None), getattr(exc, "colno", None)) from exc
    return validate(raw)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
