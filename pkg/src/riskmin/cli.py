"""Command-line runner for the experiment families.

A run is described by one JSON document::

    {
      "subcommand": "aggregation-lb",
      "baseSeed": 20240601,
      "outputPath": "out/agg",
      "format": "csv",
      "parameters": {"N": [8, 16], "n": [100, 400], "reps": 10000}
    }

Outputs go to the ``outputPath`` directory: ``results.csv`` or
``results.json``, ``summary.json``, and ``manifest.json`` (config echo,
library version, seed, and a SHA-256 per output file). Identical configs
produce byte-identical files.

Exit codes: 0 success, 2 config error, 3 partial failures, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import aggregation_bounds as agg
from . import local_complexity as lc
from . import model_selection as ms
from . import sparse_erm as se
from .core_model import EvaluatedClass, FiniteSupportDistribution, draw_sample, make_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_IO = 4

SUBCOMMANDS = ("selection-oracle", "aggregation-lb", "sparse-audit", "complexity-curve")
FORMATS = ("csv", "json")


# -- validation ---------------------------------------------------------------


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _int_at_least(lo):
    def check(v):
        return None if _is_int(v) and v >= lo else f"must be an integer >= {lo}"
    return check


def _positive():
    def check(v):
        return None if _is_num(v) and v > 0 else "must be a positive number"
    return check


def _num_at_least(lo):
    def check(v):
        return None if _is_num(v) and v >= lo else f"must be a number >= {lo}"
    return check


def _int_list(lo):
    def check(v):
        if not isinstance(v, list) or not v or not all(_is_int(x) and x >= lo for x in v):
            return f"must be a nonempty list of integers >= {lo}"
        return None
    return check


def _int_range(lo):
    def check(v):
        if not (isinstance(v, list) and len(v) == 2 and all(_is_int(x) for x in v) and lo <= v[0] <= v[1]):
            return f"must be [low, high] integers with {lo} <= low <= high"
        return None
    return check


def _choice(options):
    def check(v):
        return None if v in options else f"must be one of {list(options)}"
    return check


def _bool():
    def check(v):
        return None if isinstance(v, bool) else "must be true or false"
    return check


def _increasing_grid():
    def check(v):
        if not isinstance(v, list) or not v or not all(_is_num(x) and x >= 0 for x in v):
            return "must be a nonempty list of nonnegative numbers"
        if any(b <= a for a, b in zip(v, v[1:])):
            return "must be strictly increasing"
        return None
    return check


# name -> (check, default); default None means required
PARAMETERS = {
    "selection-oracle": {
        "instances": (_int_at_least(1), None),
        "mRange": (_int_range(1), [3, 10]),
        "MRange": (_int_range(1), [4, 30]),
        "nRange": (_int_range(1), [5, 60]),
        "JMax": (_int_at_least(1), 6),
    },
    "aggregation-lb": {
        "N": (_int_list(2), None),
        "n": (_int_list(1), None),
        "reps": (_int_at_least(1), None),
    },
    "sparse-audit": {
        "N": (_int_at_least(2), None),
        "m": (_int_at_least(2), None),
        "dStar": (_int_at_least(1), None),
        "d": (_int_at_least(0), None),
        "A": (_num_at_least(1), None),
        "D": (_positive(), None),
        "sampleSizes": (_int_list(1), None),
        "reps": (_int_at_least(1), None),
        "rule": (_choice(("one_sided", "two_sided")), "one_sided"),
        "penalty": (_choice(("L1", "Lp")), "Lp"),
        "loss": (_choice(se.LOSS_KINDS), "quadratic"),
        "noise": (_num_at_least(0), 0.5),
        "exactSparse": (_bool(), True),
        "solverTol": (_positive(), se.SOLVER_TOL),
        "maxIters": (_int_at_least(1), se.MAX_ITERS),
    },
    "complexity-curve": {
        "m": (_int_at_least(1), None),
        "M": (_int_at_least(1), None),
        "n": (_int_at_least(1), None),
        "deltas": (_increasing_grid(), None),
        "t": (_positive(), 1.0),
        "K1": (_positive(), 2.0),
        "K2": (_positive(), 1.0),
        "K3": (_positive(), 1.0),
        "numRademacherDraws": (_int_at_least(1), 1000),
        "fixedPointTol": (_positive(), 1e-9),
        "deltaMax": (_positive(), 1.0),
        "exhaustive": (_bool(), False),
    },
}


def validate(config) -> list[str]:
    """Every violated guard as ``"field: message"``; empty when the config is runnable."""
    if not isinstance(config, dict):
        return ["config: must be a JSON object"]
    problems = []
    if "baseSeed" not in config:
        problems.append("baseSeed: missing")
    elif not (_is_int(config["baseSeed"]) and config["baseSeed"] >= 0):
        problems.append("baseSeed: must be a nonnegative integer")
    if not isinstance(config.get("outputPath"), str) or not config.get("outputPath"):
        problems.append("outputPath: missing or not a string")
    if config.get("format", "csv") not in FORMATS:
        problems.append(f"format: must be one of {list(FORMATS)}")
    sub = config.get("subcommand")
    if sub not in SUBCOMMANDS:
        problems.append(f"subcommand: must be one of {list(SUBCOMMANDS)}")
        return problems
    params = config.get("parameters", {})
    if not isinstance(params, dict):
        return problems + ["parameters: must be a JSON object"]
    table = PARAMETERS[sub]
    for name in sorted(set(params) - set(table)):
        problems.append(f"parameters.{name}: unknown parameter for {sub}")
    for name, (check, default) in table.items():
        if name not in params:
            if default is None:
                problems.append(f"parameters.{name}: missing")
            continue
        msg = check(params[name])
        if msg:
            problems.append(f"parameters.{name}: {msg}")
    if not problems:
        problems.extend(_cross_checks(sub, resolve_parameters(config)))
    return problems


def _cross_checks(sub: str, p: dict) -> list[str]:
    out = []
    if sub == "aggregation-lb":
        for N in p["N"]:
            for n in p["n"]:
                if not math.log(N) < 16 * n:
                    out.append(f"parameters.N: ln N < 16 n violated for N={N}, n={n}")
    elif sub == "sparse-audit":
        if p["dStar"] > p["N"]:
            out.append("parameters.dStar: must be <= N")
        if p["d"] > p["N"]:
            out.append("parameters.d: must be <= N")
        if p["exactSparse"] and p["loss"] != "quadratic":
            out.append("parameters.exactSparse: only available with the quadratic loss")
        if p["exactSparse"] and p["m"] <= p["N"]:
            out.append("parameters.m: exactSparse needs m > N")
    elif sub == "complexity-curve":
        if not p["fixedPointTol"] < p["deltaMax"]:
            out.append("parameters.fixedPointTol: must be < deltaMax")
    return out


def resolve_parameters(config: dict) -> dict:
    table = PARAMETERS[config["subcommand"]]
    given = config.get("parameters", {})
    return {name: given.get(name, default) for name, (_, default) in table.items()}


# -- experiments --------------------------------------------------------------


class Outcome:
    def __init__(self, results: bytes, summary: dict, failures: int = 0):
        self.results = results
        self.summary = summary
        self.failures = failures


def _csv_text(write, rows) -> bytes:
    buf = io.StringIO()
    write(rows, buf)
    return buf.getvalue().encode()


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _run_selection_oracle(p: dict, seed: int, fmt: str) -> Outcome:
    reports = ms.run_audit_sweep(
        p["instances"], seed,
        m_range=tuple(p["mRange"]), M_range=tuple(p["MRange"]), n_range=tuple(p["nRange"]), J_max=p["JMax"],
    )
    summary = {
        "instances": len(reports),
        "conditionsHold": sum(r.conditions_hold for r in reports),
        "oracleHolds": sum(r.oracle_holds for r in reports),
        "conditionsHoldButOracleFails": sum(r.conditions_hold and not r.oracle_holds for r in reports),
        "upperHoldsButSingleClassFails": sum(r.upper_condition_holds and not r.single_class_holds for r in reports),
    }
    if fmt == "csv":
        results = _csv_text(ms.write_audit_csv, reports)
    else:
        results = _csv_text(ms.write_audit_json, reports)
    return Outcome(results, summary)


def _run_aggregation(p: dict, seed: int, fmt: str) -> Outcome:
    rows = agg.sweep(p["N"], p["n"], p["reps"], seed)
    ratios = [r.ratio for r in rows]
    summary = {"cells": len(rows), "minRatio": min(ratios), "maxRatio": max(ratios)}
    if fmt == "csv":
        results = _csv_text(agg.write_sweep_csv, rows)
    else:
        results = _json_bytes([r._asdict() for r in rows])
    return Outcome(results, summary)


def _run_sparse(p: dict, seed: int, fmt: str) -> Outcome:
    problem = se.make_sparse_problem(
        make_rng(seed, 0), p["N"], p["m"], p["dStar"], loss_kind=p["loss"], noise=p["noise"],
        exact_sparse=p["exactSparse"],
    )
    rows = se.sparsity_audit(
        problem, p["d"], p["A"], p["D"], p["sampleSizes"], p["reps"], seed,
        rule=p["rule"], penalty_kind=p["penalty"], tol=p["solverTol"], max_iter=p["maxIters"],
    )
    per_n = se.summarize_sparsity(rows, p["N"], p["A"])
    medians = [s.median_gamma_hat for s in per_n]
    slope = None
    if len(per_n) >= 2 and all(v > 0 for v in medians):
        slope = se.loglog_slope([s.n for s in per_n], medians)
    failures = sum(not r.converged for r in rows)
    summary = {
        "perSampleSize": [s._asdict() for s in per_n],
        "medianGammaHatSlope": slope,
        "fittedTwoSided": [{"C": c, "K": k} for c, k in se.fit_two_sided_constants(rows)],
        "failures": failures,
    }
    if fmt == "csv":
        results = _csv_text(se.write_sparsity_csv, rows)
    else:
        results = _json_bytes([r._asdict() for r in sorted(rows, key=lambda r: (r.n, r.rep))])
    return Outcome(results, summary, failures)


def _run_complexity(p: dict, seed: int, fmt: str) -> Outcome:
    rng = make_rng(seed, 0)
    dist = FiniteSupportDistribution(rng.dirichlet(np.ones(p["m"])))
    values = rng.random((p["m"], p["M"]))
    sample = draw_sample(dist, p["n"], int(np.random.SeedSequence([seed, 1]).generate_state(1, np.uint64)[0]))
    cls = EvaluatedClass.from_population(values, sample)
    config = lc.ComplexityConfig(
        t=p["t"], K1=p["K1"], K2=p["K2"], K3=p["K3"], num_rademacher_draws=p["numRademacherDraws"],
        fixed_point_tol=p["fixedPointTol"], delta_max=p["deltaMax"], exhaustive=p["exhaustive"],
    )
    mc_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1, np.uint64)[0])
    ev = lc.EmpiricalComplexity(cls, sample, config, mc_seed)
    curve = ev.curve(p["deltas"])
    fp = lc.sharp_transform(ev, config)
    summary = {"fixedPoint": fp.delta, "crossed": fp.crossed}
    if fmt == "csv":
        buf = io.StringIO()
        curve.to_csv(buf)
        results = buf.getvalue().encode()
    else:
        results = _json_bytes(
            [
                {"delta": float(a), "phiHat": float(b), "dHat": float(c), "uBar": float(d)}
                for a, b, c, d in zip(curve.deltas, curve.phi_hat, curve.d_hat, curve.u_bar)
            ]
        )
    return Outcome(results, summary)


RUNNERS = {
    "selection-oracle": _run_selection_oracle,
    "aggregation-lb": _run_aggregation,
    "sparse-audit": _run_sparse,
    "complexity-curve": _run_complexity,
}


def run(config: dict, output_path: str | None = None) -> int:
    """Validate, execute, and write outputs; returns the exit status."""
    problems = validate(config)
    if problems:
        for msg in problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    fmt = config.get("format", "csv")
    seed = config["baseSeed"]
    params = resolve_parameters(config)
    outcome = RUNNERS[config["subcommand"]](params, seed, fmt)

    files = {
        f"results.{fmt}": outcome.results,
        "summary.json": _json_bytes(outcome.summary),
    }
    manifest = {
        "config": config,
        "resolvedParameters": params,
        "libraryVersion": __version__,
        "baseSeed": seed,
        "files": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(files.items())},
        "failures": outcome.failures,
    }
    files["manifest.json"] = _json_bytes(manifest)
    out_dir = Path(output_path or config["outputPath"])
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, data in files.items():
            (out_dir / name).write_bytes(data)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if outcome.failures:
        print(f"{outcome.failures} solver failures recorded in the results", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return None, EXIT_IO
    try:
        return json.loads(text), EXIT_OK
    except json.JSONDecodeError as exc:
        print(f"config error: not valid JSON ({exc})", file=sys.stderr)
        return None, EXIT_CONFIG


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="riskmin", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to the JSON config")
    p_run.add_argument("-o", "--output", help="override outputPath")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    config, status = _load(args.config)
    if config is None:
        return status
    if args.command == "validate":
        problems = validate(config)
        for msg in problems:
            print(msg)
        return EXIT_CONFIG if problems else EXIT_OK
    return run(config, args.output)


if __name__ == "__main__":
    sys.exit(main())
