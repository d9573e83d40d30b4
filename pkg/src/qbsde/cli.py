"""Command line entry point: ``qbsde <subcommand> --config PATH [--seed N] [--out DIR]``.

Each run writes its payload files (CSV and JSON) under ``DIR/<subcommand>/``
and an envelope ``report.json`` next to them. Payloads depend only on the
config and seed. The envelope additionally records the wall-clock time.

Exit codes: 0 all verdicts pass, 1 some verdict failed, 2 invalid config or
usage, 3 the run raised an error (partial outputs are kept and a ``FAILED``
marker is written).
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bsde_solver import solve_bsde
from .config import ParseError, ValidationError, load_config
from .forward_sde import audit_coefficients, simulate_euler
from .generators import audit_sample, check_assumptions
from .gexpectation import (ProbeConfig, converse_comparison_probe, horizon_consistency_check, self_financing_check,
                           translation_invariance_check, uniqueness_probe, zero_interest_check)
from .representation import EpsilonLadder, RepresentationQuery, bound_audit, limit_study
from .stochastic_core import RngPolicy, make_grid, sample_brownian

SUBCOMMANDS = ("solve", "represent", "properties", "check-assumptions")
REPRESENT_COLUMNS = ("epsilon", "quotient_mean", "quotient_se", "target", "abs_err", "z_energy", "sup_tildeY",
                     "capped_fraction")
MAX_CAPPED_FRACTION = 1e-3
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3


def jsonable(obj):
    """Plain JSON data: numpy converted, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _atomic_write(path, text):
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj):
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(row[c])) if isinstance(row[c], (float, np.floating)) else row[c]
                         for c in columns])
    return buf.getvalue()


@dataclass
class ReportEnvelope:
    subcommand: str
    config: dict
    seed: int
    out_dir: str
    status: str = "ok"
    verdict: bool = False
    sections: list = field(default_factory=list)
    error: str = None
    wall_clock_seconds: float = 0.0

    @property
    def exit_code(self):
        if self.status != "ok":
            return EXIT_ERROR
        return EXIT_PASS if self.verdict else EXIT_FAIL

    def as_dict(self):
        return {
            "schema_version": self.config["schema_version"],
            "artifact_version": __version__,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "status": self.status,
            "verdict": self.verdict,
            "error": self.error,
            "wall_clock_seconds": self.wall_clock_seconds,
            "config": self.config,
            "sections": self.sections,
        }


class _Writer:
    def __init__(self, out_dir, envelope):
        self.out_dir = out_dir
        self.envelope = envelope

    def write(self, name, text):
        _atomic_write(os.path.join(self.out_dir, name), text)
        return name

    def section(self, name, files, summary, verdict):
        self.envelope.sections.append({"name": name, "files": files, "verdict": bool(verdict),
                                       "summary": jsonable(summary)})


def _forward_paths(config):
    coeffs = config.coefficients()
    grid = make_grid(0.0, config["horizon"], config["n_steps"])
    bundle = sample_brownian(grid, config["n_paths"], coeffs.d, RngPolicy(config["master_seed"]))
    return bundle, simulate_euler(coeffs, 0.0, config["sde"]["x0"], bundle)


def _run_solve(config, w):
    bundle, paths = _forward_paths(config)
    sol = solve_bsde(config.generator(), config.terminal(), paths, bundle, None, config.regression())
    se = sol.se_y()
    se[0] = sol.y0_se
    rows = [{"node": i, "t": float(t), "mean_y": float(m), "se_y": float(s)}
            for i, (t, m, s) in enumerate(zip(paths.grid.nodes, sol.mean_y(), se))]
    d = sol.diagnostics
    summary = {
        "y0": sol.y0, "y0_se": sol.y0_se, "trusted": sol.trusted,
        "diagnostics": {
            "picard_iters_max": int(d["picard_iters"].max()),
            "picard_unconverged": d["picard_unconverged"],
            "truncation_hits": d["truncation_hits"],
            "band": d["band"],
            "band_violation_fraction": d["band_violation_fraction"],
            "clip_hits": d["clip_hits"],
            "rank_deficient_regressions": d["rank_deficient_regressions"],
            "regression_residual_max": float(d["regression_residual"].max()),
            "z_max": d["z_max"],
        },
    }
    files = [w.write("solve.csv", _csv_text(("node", "t", "mean_y", "se_y"), rows)),
             w.write("solve.json", _dump_json(summary))]
    w.section("solve", files, summary, sol.trusted)
    return sol.trusted


def _run_represent(config, w):
    r = config["represent"]
    gen, coeffs = config.generator(), config.coefficients()
    ladder = EpsilonLadder(tuple(r["epsilons"]), r["substeps"])
    ok_all = True
    for t in r["t"]:
        query = RepresentationQuery(t, r["y"], r["x"], r["q"], gen, coeffs,
                                    None if r["C0"] == "auto" else r["C0"], config["horizon"])
        rep = limit_study(query, ladder, config["n_paths"], config.regression(), config["master_seed"], r["route"])
        audits = [bound_audit(query, e.eps, e, r["bound_slack"]) for e in rep.estimates]
        capped_ok = rep.max_capped_fraction < MAX_CAPPED_FRACTION
        ok = rep.verdict and capped_ok
        ok_all &= ok
        summary = {
            "t": t, "C0": query.C0, "target": rep.target, "extrapolated_limit": rep.extrapolated_limit,
            "raw_limit": rep.raw_limit, "tolerance": rep.tolerance, "verdict": rep.verdict,
            "z_energy_slope": rep.z_energy_slope, "sup_tildeY_slope": rep.sup_tildeY_slope,
            "c_fit": rep.c_fit, "energy_bound_ok": rep.energy_bound_ok(),
            "max_capped_fraction": rep.max_capped_fraction, "capped_fraction_ok": capped_ok,
            "l1_errors": rep.l1_errors, "l2_errors": rep.l2_errors,
            "bound_audits": [{"epsilon": e.eps, "eq3_ok": a.eq3_ok, "eq10_ok": a.eq10_ok, **a.details}
                             for e, a in zip(rep.estimates, audits)],
        }
        stem = f"represent_t{t:g}"
        files = [w.write(f"{stem}.csv", _csv_text(REPRESENT_COLUMNS, rep.rows())),
                 w.write(f"{stem}.json", _dump_json(summary))]
        w.section(stem, files, summary, ok)
    return ok_all


def _run_properties(config, w):
    p = config["properties"]
    g1, g2 = config.generator(), config.generator("generator2")
    cfg = ProbeConfig(config["horizon"], config["n_steps"], config["n_paths"], config["master_seed"],
                      config.regression())
    ok_all = True
    for theorem in p["theorems"]:
        if theorem in ("4.1", "5.2"):
            rep = converse_comparison_probe(g1, g2, eval_times=tuple(p["eval_times"]), cfg=cfg,
                                            hypothesis=p["hypothesis"], theorem_id=theorem)
        elif theorem == "4.2":
            rep = self_financing_check(g1, cfg)
        elif theorem == "4.3":
            rep = zero_interest_check(g1, tuple(p["y_values"]), cfg)
        elif theorem == "5.1":
            rep = uniqueness_probe(g1, g2, cfg=cfg, evidence=p["evidence"], evidence_paths=p["evidence_paths"],
                                   separation_bias=p["separation_bias"])
        elif theorem == "5.3":
            rep = translation_invariance_check(g1, config.terminal(), tuple(p["shifts"]), cfg, bias=p["bias"])
        else:
            gens = [g1] if g2 is None else [g1, g2]
            rep = horizon_consistency_check(gens, config.terminal(), p["sigma"], cfg, bias=p["bias"])
        body = rep.as_dict()
        files = [w.write(f"properties_{theorem}.json", _dump_json(body))]
        w.section(f"theorem {theorem}", files, {"verdict": rep.verdict, "n_cases": len(rep.cases)}, rep.verdict)
        ok_all &= rep.verdict
    return ok_all


def _run_check_assumptions(config, w):
    horizon = config["horizon"]
    coeffs = config.coefficients()
    sample = audit_sample(horizon, coeffs.d)
    body = {"generators": {}, "sde": None}
    ok = True
    for which in ("generator", "generator2"):
        gen = config.generator(which)
        if gen is None:
            continue
        audit = check_assumptions(gen, sample)
        body["generators"][which] = audit.as_dict()
        ok &= audit.passed
    rng = np.random.default_rng(config["master_seed"])
    x = rng.uniform(-10.0, 10.0, (20_000, coeffs.m))
    x_other = rng.uniform(-10.0, 10.0, (20_000, coeffs.m))
    ca = audit_coefficients(coeffs, 0.0, x, x_other)
    body["sde"] = {"name": coeffs.name, "mu": coeffs.mu, "nu": coeffs.nu, **ca.__dict__}
    ok &= ca.passed
    files = [w.write("assumptions.json", _dump_json(body))]
    w.section("check-assumptions", files, {"passed": ok}, ok)
    return ok


_DISPATCH = {
    "solve": _run_solve,
    "represent": _run_represent,
    "properties": _run_properties,
    "check-assumptions": _run_check_assumptions,
}


def run(config, subcommand):
    """Execute ``subcommand`` for a validated config; returns the :class:`ReportEnvelope`."""
    if subcommand not in _DISPATCH:
        raise ValueError(f"unknown subcommand {subcommand!r}; expected one of {SUBCOMMANDS}")
    out_dir = os.path.join(config["output_dir"], subcommand)
    os.makedirs(out_dir, exist_ok=True)
    marker = os.path.join(out_dir, "FAILED")
    if os.path.exists(marker):
        os.unlink(marker)
    env = ReportEnvelope(subcommand, config.as_dict(), config["master_seed"], out_dir)
    writer = _Writer(out_dir, env)
    start = time.perf_counter()
    try:
        env.verdict = bool(_DISPATCH[subcommand](config, writer))
    except Exception as exc:  # surfaced in the envelope and the exit code
        env.status = "failed"
        env.error = f"{type(exc).__name__}: {exc}"
        _atomic_write(marker, env.error + "\n")
    env.wall_clock_seconds = round(time.perf_counter() - start, 3)
    _atomic_write(os.path.join(out_dir, "report.json"), _dump_json(env.as_dict()))
    return env


def build_parser():
    parser = argparse.ArgumentParser(prog="qbsde", description="Quadratic BSDE laboratory.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--out", default=None, help="override output_dir")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config).with_overrides(args.seed, args.out)
    except (ParseError, ValidationError) as exc:
        print(f"qbsde: invalid config {args.config}:", file=sys.stderr)
        for line in (exc.errors if isinstance(exc, ValidationError) else [("", str(exc))]):
            print(f"  {line[0]}: {line[1]}" if line[0] else f"  {line[1]}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"qbsde: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    env = run(config, args.subcommand)
    status = "PASS" if env.exit_code == EXIT_PASS else ("FAIL" if env.exit_code == EXIT_FAIL else "ERROR")
    print(f"qbsde {args.subcommand}: {status} ({env.out_dir})")
    if env.error:
        print(f"  {env.error}", file=sys.stderr)
    return env.exit_code


if __name__ == "__main__":
    sys.exit(main())
