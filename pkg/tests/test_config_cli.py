import json
import os

import pytest

from qbsde import cli
from qbsde.config import DEFAULTS, ParseError, ValidationError, parse_config, validate


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _small(tmp_path, body=""):
    return f'output_dir = "{tmp_path / "out"}"\nn_paths = 4000\nn_steps = 16\n' + body


def test_defaults_are_materialized():
    cfg = parse_config("")
    assert cfg.as_dict() == DEFAULTS
    assert cfg.generator().name == "zero"
    assert cfg.generator("generator2") is None
    assert cfg.regression().z_max is None
    assert cfg.terminal().name == "brownian"


def test_overrides_revalidate():
    cfg = parse_config("").with_overrides(seed=9, output_dir="elsewhere")
    assert cfg["master_seed"] == 9 and cfg["output_dir"] == "elsewhere"
    with pytest.raises(ValidationError):
        parse_config("").with_overrides(seed=-1)


def test_all_errors_are_collected():
    text = """
n_paths = 0
[generator]
name = "pure_quadratc"
params = [1.0]
[represent]
epsilons = [0.2, 0.1]
colour = 3
"""
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    keys = info.value.keys
    assert {"n_paths", "generator.name", "represent.epsilons", "represent.colour"} <= set(keys)
    assert "pure_quadratic" in str(info.value)


def test_paired_theorem_needs_second_generator():
    with pytest.raises(ValidationError) as info:
        parse_config('[properties]\ntheorems = ["5.1"]\n')
    assert info.value.keys == ["generator2"]
    cfg = parse_config('[properties]\ntheorems = ["5.1"]\n[generator2]\nname = "pure_quadratic"\nparams = [1.0]\n')
    assert cfg.generator("generator2").parameters == (1.0,)


def test_unknown_theorem_has_hint():
    with pytest.raises(ValidationError, match="nearest"):
        validate({"properties": {"theorems": ["5.4"]}})


def test_parse_error_location():
    with pytest.raises(ParseError) as info:
        parse_config('n_paths = 10\nhorizon = = 1\n')
    assert info.value.line == 2
    assert info.value.column is not None


def test_check_assumptions_and_solve(tmp_path):
    path = _write(tmp_path, _small(tmp_path, '[generator]\nname = "pure_quadratic"\nparams = [1.0]\n'))
    assert cli.main(["check-assumptions", "--config", path]) == 0
    assert cli.main(["solve", "--config", path]) == 0
    out = tmp_path / "out" / "solve"
    summary = json.loads((out / "solve.json").read_text())
    assert abs(summary["y0"] - 0.5) < 3 * summary["y0_se"] + 0.05
    lines = (out / "solve.csv").read_text().splitlines()
    assert lines[0] == "node,t,mean_y,se_y" and len(lines) == 18
    env = json.loads((out / "report.json").read_text())
    assert env["verdict"] and env["status"] == "ok" and env["config"]["n_paths"] == 4000


def test_properties_translation_example(tmp_path):
    body = '[generator]\nname = "pure_quadratic"\nparams = [1.0]\n[properties]\ntheorems = ["5.3"]\n'
    path = _write(tmp_path, _small(tmp_path, body))
    assert cli.main(["properties", "--config", path]) == 0
    rep = json.loads((tmp_path / "out" / "properties" / "properties_5.3.json").read_text())
    assert rep["verdict"] is True
    assert {"case_id", "statistic", "se", "threshold", "verdict", "witness"} <= set(rep["cases"][0])


def test_non_a5_horizon_check_is_error(tmp_path):
    body = ('[generator]\nname = "linear"\nparams = [0.0, 1.0]\n[generator2]\nname = "linear"\nparams = [0.0, 1.0]\n'
            '[properties]\ntheorems = ["consistency-24-25"]\n')
    path = _write(tmp_path, _small(tmp_path, body))
    # linear(0, 1) is not A5: the horizon check refuses it as a configuration error
    assert cli.main(["properties", "--config", path]) == 3
    assert (tmp_path / "out" / "properties" / "FAILED").exists()


def test_error_exit_and_marker_cleared(tmp_path):
    bad = _write(tmp_path, _small(tmp_path, '[generator]\nname = "linear"\nparams = [0.0, 1.0]\n'
                                            '[properties]\ntheorems = ["5.3"]\n'), "bad.toml")
    assert cli.main(["properties", "--config", bad]) == 3
    marker = tmp_path / "out" / "properties" / "FAILED"
    assert "ConfigurationError" in marker.read_text()
    good = _write(tmp_path, _small(tmp_path, '[properties]\ntheorems = ["4.2"]\n'), "good.toml")
    assert cli.main(["properties", "--config", good]) == 0
    assert not marker.exists()


def test_truncated_solve_exits_one(tmp_path):
    path = _write(tmp_path, _small(tmp_path, '[bsde]\nz_max = 0.1\n'))
    assert cli.main(["solve", "--config", path]) == 1


def test_usage_errors(tmp_path, capsys):
    path = _write(tmp_path, 'n_paths = "many"\n[sde]\nname = "ouu"\n')
    assert cli.main(["solve", "--config", path]) == 2
    err = capsys.readouterr().err
    assert "n_paths" in err and "sde.name" in err and "'ou'" in err
    assert cli.main(["solve", "--config", str(tmp_path / "missing.toml")]) == 2
    parse = _write(tmp_path, "x = [1,\n", "parse.toml")
    assert cli.main(["solve", "--config", parse]) == 2
    assert "line" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["frobnicate", "--config", path])


def test_seed_override_changes_payload(tmp_path):
    path = _write(tmp_path, _small(tmp_path, '[generator]\nname = "pure_quadratic"\nparams = [1.0]\n'))
    cli.main(["solve", "--config", path, "--out", str(tmp_path / "a")])
    cli.main(["solve", "--config", path, "--out", str(tmp_path / "b"), "--seed", "1"])
    a = (tmp_path / "a" / "solve" / "solve.csv").read_bytes()
    b = (tmp_path / "b" / "solve" / "solve.csv").read_bytes()
    assert a != b


def test_jsonable_non_finite():
    import numpy as np

    assert cli.jsonable({"a": np.float64("inf"), "b": [np.nan, -np.inf], 1: np.int64(3)}) == \
        {"a": "inf", "b": ["nan", "-inf"], "1": 3}


def test_represent_outputs(tmp_path):
    body = ('[generator]\nname = "pure_quadratic"\nparams = [1.0]\n'
            '[represent]\nt = [0.0, 0.5]\nsubsteps = 16\n')
    path = _write(tmp_path, _small(tmp_path, body))
    cfg = parse_config(open(path).read())
    env = cli.run(cfg, "represent")
    assert env.exit_code == 0
    files = sorted(os.listdir(tmp_path / "out" / "represent"))
    assert files == ["report.json", "represent_t0.5.csv", "represent_t0.5.json", "represent_t0.csv",
                     "represent_t0.json"]
    header = (tmp_path / "out" / "represent" / "represent_t0.csv").read_text().splitlines()[0]
    assert header.split(",") == list(cli.REPRESENT_COLUMNS)
