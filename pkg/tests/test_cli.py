import json
import math
from pathlib import Path

import pytest

from riskmin.aggregation_bounds import build_instance, exact_mean_excess
from riskmin.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_PARTIAL, main, run, validate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = {
    "selection-oracle": {"instances": 40},
    "aggregation-lb": {"N": [4, 8], "n": [50, 100], "reps": 2000},
    "sparse-audit": {"N": 10, "m": 40, "dStar": 2, "d": 2, "A": 1, "D": 0.5, "sampleSizes": [50, 100], "reps": 3},
    "complexity-curve": {"m": 5, "M": 6, "n": 30, "deltas": [0.0, 0.1, 0.5, 1.0], "numRademacherDraws": 200},
}


def config(sub, out, fmt="csv", **params):
    return {"subcommand": sub, "baseSeed": 3, "outputPath": str(out), "format": fmt, "parameters": {**SMALL[sub], **params}}


def test_validate_examples():
    cfg = config("aggregation-lb", "x")
    assert validate(cfg) == []
    missing = dict(cfg)
    del missing["baseSeed"]
    problems = validate(missing)
    assert len(problems) == 1 and problems[0].startswith("baseSeed")
    bad = config("aggregation-lb", "x", N=[10**9], n=[1])
    assert any("ln N < 16 n" in p for p in validate(bad))
    assert validate(config("sparse-audit", "x", dStar=20)) != []
    assert any("unknown" in p for p in validate(config("selection-oracle", "x", bogus=1)))
    assert validate({"subcommand": "nope"}) != []
    assert validate([]) == ["config: must be a JSON object"]


def test_shipped_configs_validate():
    for path in sorted(CONFIGS.glob("*.json")):
        assert validate(json.loads(path.read_text())) == [], path.name


@pytest.mark.parametrize("sub", sorted(SMALL))
@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_runs_are_byte_identical(tmp_path, sub, fmt):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run(config(sub, "unused", fmt=fmt), str(out)) == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {f"results.{fmt}", "summary.json", "manifest.json"}
    manifest = json.loads(outs[0]["manifest.json"])
    assert set(manifest["files"]) == {f"results.{fmt}", "summary.json"}


def test_aggregation_cli_matches_enumeration(tmp_path):
    cfg = config("aggregation-lb", tmp_path, N=[2], n=[2], reps=10_000)
    assert run(cfg) == EXIT_OK
    lines = (tmp_path / "results.csv").read_text().splitlines()
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    exact = exact_mean_excess(build_instance(2, 2))
    assert abs(float(row["estimate"]) - exact) <= 4 * float(row["stderr"])
    assert float(row["ratio"]) == pytest.approx(float(row["estimate"]) / math.sqrt(math.log(2) / 2))


def test_selection_cli_summary(tmp_path):
    assert run(config("selection-oracle", tmp_path, instances=100)) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["instances"] == 100
    assert summary["conditionsHoldButOracleFails"] == 0


def test_exit_codes(tmp_path, capsys):
    assert run(config("aggregation-lb", tmp_path, N=[1])) == EXIT_CONFIG
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(config("aggregation-lb", blocker / "sub")) == EXIT_IO
    partial = config("sparse-audit", tmp_path / "p", maxIters=1)
    assert run(partial) == EXIT_PARTIAL
    assert (tmp_path / "p" / "results.csv").exists()
    assert json.loads((tmp_path / "p" / "manifest.json").read_text())["failures"] > 0


def test_main_entry_point(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config("complexity-curve", tmp_path / "out")))
    assert main(["validate", str(path)]) == EXIT_OK
    assert main(["run", str(path)]) == EXIT_OK
    assert (tmp_path / "out" / "results.csv").read_text().startswith("delta,phiHat,dHat,uBar")
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_IO
    path.write_text("{not json")
    assert main(["validate", str(path)]) == EXIT_CONFIG
