import csv
import os
from pathlib import Path

import pytest

from obstaclelab.cli import main, run
from obstaclelab.config import ConfigError, load_config, parse_config
from obstaclelab.pipeline import format_value

ROOT = Path(__file__).resolve().parents[1]


def test_default_config_loads():
    cfg = load_config()
    assert cfg.grid.kind == "unit_square"
    assert cfg.measure.n_atoms == 1


@pytest.mark.parametrize(
    "data",
    [
        {"domain": {"kind": "hexagon"}},
        {"bogus": 1},
        {"solver": {"mode": "upper"}},
        {"harness": {"alpha": [0.9]}},
        {"harness": {"variants": ["nope"]}},
        {"exponent": {"kind": "sin"}, "harness": {"variants": ["constant_p"]}},
        {"obstacles": {"psi1": {"kind": "spline"}}},
        {"measure": {"atoms": [[2.0, 0.5]], "weights": [1.0]}},
        {"seed": -1},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(True) == "true"
    assert format_value(3) == "3"


def test_selftest_default_status(tmp_path):
    assert run("selftest", None, tmp_path / "o") == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "selftest.csv")))
    assert rows and all(r["passed"] == "true" for r in rows)


def test_solve_green(tmp_path):
    out = tmp_path / "g"
    assert main(["solve", "--config", str(ROOT / "configs" / "green_1d.toml"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "solution.csv")))
    h = 1.0 / 64
    assert max(float(r["error"]) for r in rows) <= h


def test_malformed_config(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[domain\nkind = 'unit_square'")
    out = tmp_path / "never"
    assert main(["solve", "--config", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
    assert [p for p in tmp_path.iterdir() if p.name.startswith(".obstaclelab-")] == []


def test_missing_config(tmp_path):
    assert run("solve", str(tmp_path / "missing.toml"), tmp_path / "o") == 2


def test_solver_failure_status(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[domain]\nkind = "unit_square"\nN = 17\n[chain]\nrho = [0.05]\n')
    out = tmp_path / "o"
    assert run("chain", str(cfg), out) == 3
    assert not out.exists()


def test_invariant_status(tmp_path):
    cfg = tmp_path / "c.toml"
    # window centre outside the square
    cfg.write_text('[domain]\nkind = "unit_square"\nN = 17\n[chain]\ncenter = [0.5, -0.5]\n')
    assert run("chain", str(cfg), tmp_path / "o") == 4


def test_chain_table(tmp_path):
    assert run("chain", None, tmp_path / "o") == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "chain_table.csv")))
    assert {r["stage"] for r in rows} >= {"u_z", "z_h", "h_w", "w_v", "vbar_lip"}


def test_sweep_and_seed_override(tmp_path):
    assert run("sweep", None, tmp_path / "s", seed=7) == 0
    rows = list(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
    assert {r["N"] for r in rows} == {"17", "33"}


def test_verify_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("verify", None, tmp_path / name, seed=3) == 0
    files = sorted(os.listdir(tmp_path / "a"))
    assert "estimate_report.csv" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_shipped_configs_parse():
    for path in sorted((ROOT / "configs").glob("*.toml")):
        load_config(path)


def test_csv_headers_match_schema(tmp_path):
    import json
    from importlib import resources

    schema = json.loads(resources.files("obstaclelab").joinpath("data/csv_schema.json").read_text())["files"]
    for sub in ("selftest", "chain", "sweep"):
        assert run(sub, None, str(tmp_path / sub)) == 0
        for path in (tmp_path / sub).glob("*.csv"):
            header = path.read_text().splitlines()[0].split(",")
            assert header == schema[path.name]["columns"]
