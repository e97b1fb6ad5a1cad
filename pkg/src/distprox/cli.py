"""Command-line entry point: ``distprox <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 non-convergence or numeric
failure, 3 I/O or schema error. Output files go to ``--out-dir``, else the
config's ``output.dir``, else ``$DISTPROX_OUTPUT_DIR``, else the working
directory.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod
from .bench import DEFAULT_RUN, RegressionConfig, run_benchmark
from .consensus import (AssumptionViolation, CentralizedNotConverged, LocalSolveError, run,
                        validate_run, write_trace_csv)
from .scenario import (ScenarioConfig, UnreachableTarget, epsilon_naive, epsilon_tight,
                       estimate_violation, invert_sample_size, report_common)

OK, INVALID, NOT_CONVERGED, IO_ERROR = 0, 1, 2, 3
ENV_OUTPUT_DIR = "DISTPROX_OUTPUT_DIR"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def to_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _out_dir(args, doc) -> Path:
    d = args.out_dir or doc.get("output", {}).get("dir") or os.environ.get(ENV_OUTPUT_DIR) or "."
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _artifact_config(doc: dict) -> dict:
    """Resolved config as embedded in artifacts; the parallelism hint does not affect results."""
    out = copy.deepcopy(doc)
    out.get("run", {}).pop("workers", None)
    return out


def _problem(doc):
    built = cfgmod.build_problem(doc)
    return built if "problem" in doc else built[0]


# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    doc = cfgmod.load(args.config)
    problem = _problem(doc)
    schedule = cfgmod.build_network(doc["network"], problem.m)
    issues, report = validate_run(problem, schedule)
    print(f"agents: {problem.m}, dimension: {problem.dim}")
    print(f"network: {schedule.kind}, eta={schedule.eta}, T={schedule.T}, period={schedule.period}")
    print(f"strongly connected: {report.strongly_connected}, diameter: {report.diameter}, "
          f"max recurrence gap: {report.max_recurrence_gap}")
    steps = cfgmod.build_steps(doc["steps"])
    if steps.kind == "harmonic":
        print(f"steps: c(k) = {steps.alpha}/(k+1), non-increasing, divergent sum, summable squares")
    else:
        print("steps: explicit, positive and non-increasing "
              "(divergence and square-summability cannot be checked on a finite list)")
    for msg in issues:
        print(f"VIOLATION: {msg}")
    print("OK" if not issues else f"{len(issues)} violation(s)")
    return OK if not issues else INVALID


def cmd_run(args) -> int:
    doc = cfgmod.load(args.config)
    problem = _problem(doc)
    schedule = cfgmod.build_network(doc["network"], problem.m)
    steps = cfgmod.build_steps(doc["steps"])
    runcfg = cfgmod.build_run(doc["run"], args.workers)
    out = _out_dir(args, doc)
    result = run(problem, schedule, steps, runcfg)
    if runcfg.trace == "full":
        write_trace_csv(result, out / doc["output"]["trace"])
    summary = {"version": __version__, "config": _artifact_config(doc), "result": result.summary()}
    (out / doc["output"]["summary"]).write_text(to_json(summary))
    print(f"{'converged' if result.converged else 'not converged'} after {result.iterations} iterations; "
          f"consensus residual {result.consensus_residual:.3e}; objective {result.objective_v:.10g}")
    return OK if result.converged else NOT_CONVERGED


def _scenario_from_args(args) -> tuple[ScenarioConfig, str]:
    if args.config:
        doc = cfgmod.load(args.config)
        if "scenario" not in doc:
            raise cfgmod.ConfigError("config has no scenario block")
        sc = doc["scenario"]
        return cfgmod.build_scenario(sc, cfgmod.agent_count(doc)), sc["mode"]
    if args.N is None or args.beta is None or args.d is None:
        raise cfgmod.ConfigError("need --config or all of --N, --beta, --d")
    N = [int(v) for v in str(args.N).split(",")]
    if len(N) == 1:
        N = N * args.m
    betas = [float(v) for v in args.betas.split(",")] if args.betas else None
    return ScenarioConfig(N, args.beta, args.d, betas), "private"


def cmd_epsilon(args) -> int:
    sc, mode = _scenario_from_args(args)
    which = args.bound or ("all" if mode == "private" else "common")
    reports = []
    if which in ("common", "improved", "all"):
        if len(set(sc.N)) == 1:
            reports.append(report_common(sc.N[0], sc.d, sc.beta))
            if sc.d >= 1:
                reports.append(report_common(sc.N[0], sc.d, sc.beta, improved=True))
        elif which != "all":
            raise cfgmod.ConfigError("shared-scenario bounds need a single sample count")
    if which in ("naive", "all"):
        reports.append(epsilon_naive(sc))
    if which in ("tight", "all"):
        reports.append(epsilon_tight(sc))
    for r in reports:
        if which == "improved" and r.method == "common":
            continue
        if which == "common" and r.method == "common_improved":
            continue
        print(to_json(r.to_dict()) if args.json else f"{r.method}: {r.value:.6f}"
              + (f"  allocation={r.allocation}" if r.allocation else "")
              + ("  (trivial)" if r.trivial else ""))
    return OK


def cmd_samplesize(args) -> int:
    try:
        N = invert_sample_size(args.eps, args.beta, args.d, args.mode, args.m)
    except UnreachableTarget as exc:
        print(str(exc), file=sys.stderr)
        return INVALID
    print(N)
    return OK


def _load_solution(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise cfgmod.ConfigError(f"cannot read solution {path}: {exc}") from exc
    if isinstance(data, dict):
        if "solution" in data:
            data = data["solution"]
        elif "x" in data:
            data = data["x"]
        elif "result" in data:
            data = np.mean(np.asarray(data["result"]["final_iterates"], dtype=float), axis=0)
        else:
            raise cfgmod.ConfigError("solution file needs a 'solution', 'x' or 'result' entry")
    return np.asarray(data, dtype=float)


def cmd_violation(args) -> int:
    doc = cfgmod.load(args.config)
    if "benchmark" not in doc:
        raise cfgmod.ConfigError("violation estimates need a benchmark block (the uncertain constraints)")
    bcfg = RegressionConfig(**doc["benchmark"])
    _, family = cfgmod.build_problem(doc)
    x = _load_solution(args.solution)
    if x.shape != (bcfg.n,):
        raise cfgmod.ConfigError(f"solution has shape {x.shape}, expected ({bcfg.n},)")
    M = args.samples or bcfg.validation_samples
    seed = bcfg.validation_seed if args.seed is None else args.seed
    est = estimate_violation(x, family, M, seed, workers=args.workers or 1)
    print(to_json(est.to_dict()))
    return OK


def cmd_bench(args) -> int:
    if args.config:
        doc = cfgmod.load(args.config)
        if "benchmark" not in doc:
            raise cfgmod.ConfigError("bench needs a benchmark block")
    else:
        over = {"d": 10, "N": 300, "validation_samples": 20000, "oracle": True} if args.reduced else {}
        doc = cfgmod.resolve({"benchmark": over, "run": dict(DEFAULT_RUN)})
    bcfg = RegressionConfig(**doc["benchmark"])
    runcfg = cfgmod.build_run(doc["run"], args.workers)
    out = _out_dir(args, doc)
    schedule = cfgmod.build_network(doc["network"], bcfg.m)
    summary, result = run_benchmark(bcfg, runcfg, schedule=schedule)
    if runcfg.trace == "full":
        write_trace_csv(result, out / doc["output"]["trace"])
    body = {"version": __version__, "config": _artifact_config(doc), "benchmark": summary.to_dict()}
    (out / doc["output"]["summary"]).write_text(to_json(body))
    v = summary.violation
    print(f"worst-case error {summary.worst_case_error:.6f}; consensus residual {summary.consensus_residual:.3e}; "
          f"iterations {summary.iterations}")
    print(f"eps naive {summary.eps_naive.value:.6f}; eps tight {summary.eps_tight.value:.6f}; "
          f"empirical violation {v.rate:.5f} [{v.ci_low:.5f}, {v.ci_high:.5f}]")
    if summary.objective_gap is not None:
        print(f"objective gap to centralized solution {summary.objective_gap:.3e}")
    return OK if summary.converged else NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distprox", description="Distributed proximal minimization "
                                "over time-varying networks with scenario-based certificates.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check network, step sizes and problem assumptions")
    s.add_argument("config")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("run", help="run the distributed algorithm; writes trace CSV and summary JSON")
    s.add_argument("config")
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("epsilon", help="violation-probability bounds")
    s.add_argument("--config")
    s.add_argument("--N", help="samples per agent, one value or comma-separated")
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--beta", type=float)
    s.add_argument("--betas", help="comma-separated confidence shares (default beta/m each)")
    s.add_argument("--d", type=int)
    s.add_argument("--bound", choices=["common", "improved", "naive", "tight", "all"])
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_epsilon)

    s = sub.add_parser("samplesize", help="smallest sample count reaching a violation level")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--mode", choices=["common", "tight_uniform"], default="common")
    s.add_argument("--m", type=int, default=1)
    s.set_defaults(func=cmd_samplesize)

    s = sub.add_parser("violation", help="Monte-Carlo violation estimate of a solution")
    s.add_argument("config")
    s.add_argument("--solution", required=True)
    s.add_argument("--samples", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_violation)

    s = sub.add_parser("bench", help="regression benchmark end to end")
    s.add_argument("config", nargs="?")
    s.add_argument("--reduced", action="store_true", help="d=10, N=300 with centralized comparison")
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_ERROR
    except AssumptionViolation as exc:
        for msg in exc.issues:
            print(f"VIOLATION: {msg}", file=sys.stderr)
        return INVALID
    except (LocalSolveError, CentralizedNotConverged) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NOT_CONVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
