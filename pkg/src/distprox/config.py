"""Experiment files: schema validation, canonical form and object builders.

``resolve`` turns a raw JSON document into its canonical form with every
default filled in; ``resolve(resolve(doc)) == resolve(doc)``. The builders
turn canonical sections into library objects.
"""
from __future__ import annotations

import json
from dataclasses import asdict, fields
from importlib import resources
from typing import Any

import jsonschema
import numpy as np

from .bench import DEFAULT_RUN, RegressionConfig
from .consensus import RunConfig, StepSchedule
from .model import (L1, AgentSpec, Ball, Box, ConvexSet, Halfspace, Intersection, Linear,
                    ObjectiveTerm, ProblemSpec, QuadraticDiagonal, Sum)
from .network import NetworkSchedule, make_schedule
from .scenario import ScenarioConfig


class ConfigError(ValueError):
    """Unreadable, malformed or schema-invalid experiment file."""


def schema() -> dict:
    text = resources.files("distprox").joinpath("schemas/experiment.schema.json").read_text()
    return json.loads(text)


def _where(err: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return path.lstrip(".") or "<root>"


def _leaf_errors(err):
    """For a failed ``oneOf`` over tagged variants, report the errors of the variant named by ``type``/``kind``."""
    if err.validator != "oneOf" or not err.context or not isinstance(err.instance, dict):
        return [err]
    by_branch: dict = {}
    for sub in err.context:
        by_branch.setdefault(sub.relative_schema_path[0], []).append(sub)
    for subs in by_branch.values():
        tag_failed = any(s.validator == "const" and list(s.relative_path)[:1] in (["type"], ["kind"])
                         for s in subs)
        if not tag_failed:
            return [leaf for s in subs for leaf in _leaf_errors(s)]
    return [err]


def check_schema(doc: Any) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_where(e)}: {e.message}" for err in errors for e in _leaf_errors(err)]
        raise ConfigError("schema errors:\n  " + "\n  ".join(lines))


def load(path) -> dict:
    """Read, validate and resolve an experiment file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return loads(text)


def loads(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return resolve(doc)


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# sets and objectives <-> dicts


def set_from_dict(d: dict) -> ConvexSet:
    t = d["type"]
    if t == "box":
        return Box(d["lower"], d["upper"])
    if t == "halfspace":
        return Halfspace(d["normal"], d["offset"])
    if t == "ball":
        return Ball(d["center"], d["radius"])
    if t == "intersection":
        return Intersection(tuple(set_from_dict(m) for m in d["members"]))
    raise ConfigError(f"unknown set type {t!r}")


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a).ravel()]


def set_to_dict(s: ConvexSet) -> dict:
    if isinstance(s, Box):
        return {"type": "box", "lower": _floats(s.lower), "upper": _floats(s.upper)}
    if isinstance(s, Halfspace):
        return {"type": "halfspace", "normal": _floats(s.normal), "offset": float(s.offset)}
    if isinstance(s, Ball):
        return {"type": "ball", "center": _floats(s.center), "radius": float(s.radius)}
    if isinstance(s, Intersection):
        return {"type": "intersection", "members": [set_to_dict(m) for m in s.members]}
    raise TypeError(f"cannot serialize {type(s).__name__}")


def term_from_dict(d: dict) -> ObjectiveTerm:
    t = d["type"]
    if t == "linear":
        return Linear(d["g"])
    if t == "quadratic":
        return QuadraticDiagonal(d["h"], d["g"])
    if t == "l1":
        return L1(d["weight"])
    if t == "sum":
        return Sum(tuple(term_from_dict(x) for x in d["terms"]))
    raise ConfigError(f"unknown objective type {t!r}")


def term_to_dict(f: ObjectiveTerm) -> dict:
    if isinstance(f, Linear):
        return {"type": "linear", "g": _floats(f.g)}
    if isinstance(f, QuadraticDiagonal):
        return {"type": "quadratic", "h": _floats(f.h), "g": _floats(f.g)}
    if isinstance(f, L1):
        return {"type": "l1", "weight": float(f.weight)}
    if isinstance(f, Sum):
        return {"type": "sum", "terms": [term_to_dict(x) for x in f.terms]}
    raise TypeError(f"cannot serialize {type(f).__name__}")


def problem_from_dict(d: dict) -> ProblemSpec:
    shared = tuple(d["shared"]) if "shared" in d else None
    agents = []
    for a in d["agents"]:
        agents.append(AgentSpec(term_from_dict(a["objective"]), set_from_dict(a["constraint"]),
                                a.get("initial"), shared))
    ip = d.get("interior_point")
    if ip is None:
        return ProblemSpec(tuple(agents))
    return ProblemSpec(tuple(agents), interior_point=ip["center"], interior_radius=ip["radius"])


def problem_to_dict(p: ProblemSpec) -> dict:
    out = {"agents": []}
    for a in p.agents:
        ad = {"objective": term_to_dict(a.objective), "constraint": set_to_dict(a.constraint)}
        if a.initial is not None:
            ad["initial"] = _floats(a.initial)
        out["agents"].append(ad)
    if p.shared is not None:
        out["shared"] = list(p.shared)
    if p.interior_point is not None:
        out["interior_point"] = {"center": _floats(p.interior_point), "radius": p.interior_radius}
    return out


# ---------------------------------------------------------------------------
# canonical document


def _run_defaults() -> dict:
    d = {f.name: getattr(RunConfig(), f.name) for f in fields(RunConfig)}
    d["seed"] = 0
    return {k: v for k, v in d.items() if v is not None}


def resolve(doc: Any) -> dict:
    check_schema(doc)
    out: dict = {}
    try:
        if "problem" in doc:
            problem = problem_from_dict(doc["problem"])
            out["problem"] = problem_to_dict(problem)
            m = problem.m
            default_net, default_alpha = "complete_uniform", 1.0
            run = _run_defaults()
        else:
            bench = RegressionConfig(**doc["benchmark"])
            out["benchmark"] = asdict(bench)
            m = bench.m
            default_net = "ring_alternating_pairs" if m % 2 == 0 else "complete_uniform"
            default_alpha = bench.alpha
            run = {**_run_defaults(), **DEFAULT_RUN}

        net = dict(doc.get("network", {"kind": default_net}))
        if "matrices" in net:
            net["matrices"] = [[_floats(row) for row in M] for M in net["matrices"]]
        out["network"] = net
        build_network(net, m)

        steps = doc.get("steps", {"kind": "harmonic", "alpha": default_alpha})
        out["steps"] = StepSchedule(**steps).to_dict()

        run.update(doc.get("run", {}))
        build_run(run)
        out["run"] = run

        if "scenario" in doc:
            sc = dict(doc["scenario"])
            cfg = build_scenario(sc, m)
            out["scenario"] = {"N": cfg.N, "beta": cfg.beta, "betas": cfg.betas, "d": cfg.d,
                               "mode": sc.get("mode", "private")}
        out["output"] = {"trace": "trace.csv", "summary": "summary.json", **doc.get("output", {})}
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"inconsistent configuration: {exc}") from exc
    return out


def build_network(net: dict, m: int) -> NetworkSchedule:
    mats = net.get("matrices")
    if mats is not None:
        mats = [np.array(M, dtype=float) for M in mats]
    return make_schedule(net["kind"], m, mats, net.get("eta"), net.get("T"))


def build_steps(steps: dict) -> StepSchedule:
    return StepSchedule(**steps)


def build_run(run: dict, workers: int | None = None) -> RunConfig:
    kw = {k: v for k, v in run.items() if k != "seed"}
    if workers is not None:
        kw["workers"] = workers
    return RunConfig(**kw)


def build_scenario(sc: dict, m: int) -> ScenarioConfig:
    N = sc["N"]
    mm = sc.get("m", m)
    if isinstance(N, int):
        N = [N] * mm
    if mode := sc.get("mode"):
        if mode == "common" and len(set(N)) != 1:
            raise ConfigError("common scenarios need one sample count")
    return ScenarioConfig(list(N), sc["beta"], sc["d"], sc.get("betas"))


def build_problem(doc: dict):
    """ProblemSpec for a problem block, or (ProblemSpec, family) for a benchmark block."""
    if "problem" in doc:
        return problem_from_dict(doc["problem"])
    from .bench import build_regression_problem
    return build_regression_problem(RegressionConfig(**doc["benchmark"]))


def agent_count(doc: dict) -> int:
    if "problem" in doc:
        return len(doc["problem"]["agents"])
    return doc["benchmark"]["m"]
