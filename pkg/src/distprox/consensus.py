"""Distributed proximal minimization driver and its diagnostics.

One iteration: every agent mixes its neighbours' iterates with the current
weight matrix, then solves its own proximal problem anchored at the mix with
coefficient c(k). Iterations stop once every agent's iterate has moved by at
most ``iterate_tolerance`` for ``termination_window`` consecutive iterations.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ConvexSet, Intersection, ObjectiveTerm, ProblemSpec, Sum, as_vector
from .network import NetworkSchedule, validate_connectivity, validate_weights
from .prox import ProxRequest, local_solve

# step used for the "minimize the local objective alone" initialisation
# x_i(0): proximal-point steps on the local problem from the projection of the origin
INITIAL_STEP = 1.0
INITIAL_ITERATIONS = 30
INITIAL_DECREASE = 1e-6


class AssumptionViolation(ValueError):
    def __init__(self, issues: Sequence[str]):
        super().__init__("; ".join(issues))
        self.issues = list(issues)


class LocalSolveError(RuntimeError):
    def __init__(self, agent: int, iteration: int, cause: Exception):
        super().__init__(f"agent {agent} failed at iteration {iteration}: {cause}")
        self.agent = agent
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class StepSchedule:
    kind: str
    alpha: float | None = None
    values: tuple = ()

    def __post_init__(self):
        if self.kind == "harmonic":
            if self.alpha is None or not self.alpha > 0 or not math.isfinite(self.alpha):
                raise ValueError("harmonic schedule needs alpha > 0")
        elif self.kind == "explicit":
            vals = tuple(float(v) for v in self.values)
            if not vals:
                raise ValueError("explicit schedule needs at least one value")
            if any(not v > 0 or not math.isfinite(v) for v in vals):
                raise ValueError("step values must be positive and finite")
            if any(b > a for a, b in zip(vals, vals[1:])):
                raise ValueError("step values must be non-increasing")
            object.__setattr__(self, "values", vals)
        else:
            raise ValueError(f"unknown step schedule {self.kind!r}")

    @classmethod
    def harmonic(cls, alpha: float) -> "StepSchedule":
        return cls("harmonic", alpha=float(alpha))

    @classmethod
    def explicit(cls, values) -> "StepSchedule":
        return cls("explicit", values=tuple(values))

    def __call__(self, k: int) -> float:
        if k < 0:
            raise ValueError("iteration index must be nonnegative")
        if self.kind == "harmonic":
            return self.alpha / (k + 1)
        # the last listed value is held beyond the end of the list
        return self.values[min(k, len(self.values) - 1)]

    def to_dict(self) -> dict:
        if self.kind == "harmonic":
            return {"kind": "harmonic", "alpha": self.alpha}
        return {"kind": "explicit", "values": list(self.values)}


@dataclass
class RunConfig:
    max_iterations: int = 5000
    iterate_tolerance: float = 1e-7
    termination_window: int | None = None
    inner_tol: float = 1e-10
    # "full" keeps iterates, "scalars" only the per-iteration scalars
    trace: str = "full"
    workers: int = 1
    diagnostics: bool = False
    allow_invalid: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.iterate_tolerance > 0 or not self.inner_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.termination_window is not None and self.termination_window < 1:
            raise ValueError("termination_window must be at least 1")
        if self.trace not in ("full", "scalars"):
            raise ValueError("trace must be 'full' or 'scalars'")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass
class IterationTrace:
    """Per-iteration records; index k refers to iteration k of the algorithm.

    ``x[k]`` holds x_i(k) for k = 0..K, ``z[k]`` the mix z_i(k) and
    ``e[k]`` the error e_i(k+1) = x_i(k+1) - z_i(k) for k = 0..K-1.
    """

    m: int
    n: int
    full: bool = True
    x: list = field(default_factory=list)
    z: list = field(default_factory=list)
    e: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    v: list = field(default_factory=list)
    consensus_residual: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    error_norms: list = field(default_factory=list)
    cumulative_error: list = field(default_factory=list)
    change: list = field(default_factory=list)
    mix_drift: list = field(default_factory=list)
    vbar: list = field(default_factory=list)
    infeasibility: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.steps)

    def states(self, k: int) -> np.ndarray:
        if not self.full:
            raise ValueError("iterates were not kept; run with trace='full'")
        return self.x[k]


@dataclass
class RunResult:
    x: np.ndarray
    converged: bool
    iterations: int
    consensus_residual: float
    objective_v: float
    objective_vbar: float | None
    termination_window: int
    reason: str
    trace: IterationTrace

    @property
    def v(self) -> np.ndarray:
        return self.x.mean(axis=0)

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "reason": self.reason,
            "termination_window": self.termination_window,
            "consensus_residual": self.consensus_residual,
            "objective_v": self.objective_v,
            "objective_vbar": self.objective_vbar,
            "final_iterates": self.x.tolist(),
            "cumulative_error": self.trace.cumulative_error[-1] if self.trace.cumulative_error else 0.0,
        }


def _block(problem: ProblemSpec):
    return problem.shared or (0, problem.dim)


def mix(A, states) -> np.ndarray:
    """z_i = sum_j A[i, j] x_j for states stacked as rows."""
    A = np.asarray(A, dtype=float)
    X = np.asarray(states, dtype=float)
    if X.ndim != 2:
        raise ValueError("states must be an (m, n) array")
    if A.shape != (X.shape[0], X.shape[0]):
        raise ValueError(f"weight matrix shape {A.shape} does not match {X.shape[0]} agents")
    return A @ X


def _solve_agent(problem, i, anchor, c, start, inner_tol, k):
    agent = problem.agents[i]
    mask = None
    if problem.shared is not None:
        mask = np.zeros(problem.dim)
        a, b = problem.shared
        mask[a:b] = 1.0
    try:
        req = ProxRequest(agent.objective, agent.constraint, anchor, c, tol=inner_tol,
                          penalty_mask=mask, start=start)
        return local_solve(req).minimizer
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise LocalSolveError(i, k, exc) from exc


def _solve_all(problem, anchors, c, starts, inner_tol, k, pool):
    m = problem.m
    if pool is None:
        rows = [_solve_agent(problem, i, anchors[i], c, starts[i], inner_tol, k) for i in range(m)]
    else:
        rows = list(pool.map(lambda i: _solve_agent(problem, i, anchors[i], c, starts[i], inner_tol, k),
                             range(m)))
    return np.array(rows)


def step(problem: ProblemSpec, schedule: NetworkSchedule, steps: StepSchedule, k: int, states,
         inner_tol: float = 1e-10, pool=None):
    """One iteration; returns (x(k+1), z(k), e(k+1)).

    With a shared block only that block is mixed; private coordinates of
    z_i(k) are the agent's own current values.
    """
    X = np.asarray(states, dtype=float)
    if X.shape != (problem.m, problem.dim):
        raise ValueError(f"states must have shape {(problem.m, problem.dim)}, got {X.shape}")
    a, b = _block(problem)
    Z = X.copy()
    Z[:, a:b] = mix(schedule.matrix(k), X[:, a:b])
    Xn = _solve_all(problem, Z, steps(k), X, inner_tol, k, pool)
    return Xn, Z, Xn - Z


def proximal_point(f: ObjectiveTerm, X: ConvexSet, x, c: float, iterations: int, tol: float = 0.0,
                   decrease: float = 0.0, inner_tol: float = 1e-10) -> tuple[np.ndarray, bool]:
    """Proximal-point steps x <- argmin_X f + ||x - .||^2 / (2c) from x.

    Stops when a step moves less than ``tol`` or lowers f by at most
    ``decrease`` (relative); returns (x, stopped_early). Every iterate lies in X.
    """
    fx = f.value(x)
    for _ in range(iterations):
        xn = local_solve(ProxRequest(f, X, x, c, tol=inner_tol, start=x)).minimizer
        fn = f.value(xn)
        moved = np.linalg.norm(xn - x)
        x = xn
        if moved <= tol or (decrease > 0 and fx - fn <= decrease * (1.0 + abs(fn))):
            return x, True
        fx = fn
    return x, False


def initial_states(problem: ProblemSpec, inner_tol: float = 1e-10,
                   iterations: int = INITIAL_ITERATIONS) -> np.ndarray:
    """Declared initial points, else an approximate local minimizer.

    Starting from the projection of the origin, up to ``iterations``
    proximal-point steps with c = INITIAL_STEP are taken on f_i over X_i,
    stopping early once a step lowers f_i by less than INITIAL_DECREASE
    (relative). Every step returns a point of X_i, so x_i(0) is feasible
    however early the loop stops.
    """
    rows = []
    for i, agent in enumerate(problem.agents):
        if agent.initial is not None:
            rows.append(np.array(agent.initial))
            continue
        try:
            x0 = agent.constraint.project(np.zeros(agent.dim))
            x, _ = proximal_point(agent.objective, agent.constraint, x0, INITIAL_STEP, iterations,
                                  decrease=INITIAL_DECREASE, inner_tol=inner_tol)
            rows.append(x)
        except Exception as exc:  # noqa: BLE001
            raise LocalSolveError(i, 0, exc) from exc
    return np.array(rows)


def feasible_average(v, xbar, rho: float, sets: Sequence[ConvexSet]) -> tuple[np.ndarray, float]:
    """Pull v towards the interior point; returns (vbar, eps) with eps = sum_i dist(v, X_i)."""
    if xbar is None or rho is None:
        raise ValueError("feasible average needs an interior point and radius")
    if not rho > 0:
        raise ValueError("interior radius must be positive")
    v = as_vector(v)
    xbar = as_vector(xbar, len(v))
    eps = float(sum(s.distance(v) for s in sets))
    if eps == 0.0:
        return v.copy(), 0.0
    return (eps * xbar + rho * v) / (eps + rho), eps


def validate_run(problem: ProblemSpec, schedule: NetworkSchedule, horizon: int | None = None):
    """Collect assumption violations of the problem and the network; returns (issues, report)."""
    issues = list(problem.validate())
    if schedule.m != problem.m:
        issues.append(f"network has {schedule.m} agents, problem has {problem.m}")
    report = validate_connectivity(schedule, horizon)
    issues.extend(report.violations)
    checked = schedule.period or max(horizon or 0, 2 * schedule.T)
    for k in range(checked):
        issues.extend(f"W({k}): {msg}" for msg in validate_weights(schedule.matrix(k), schedule.eta))
    return issues, report


def run(problem: ProblemSpec, schedule: NetworkSchedule, steps: StepSchedule,
        config: RunConfig | None = None, initial=None) -> RunResult:
    config = config or RunConfig()
    issues, report = validate_run(problem, schedule)
    if issues and not config.allow_invalid:
        raise AssumptionViolation(issues)
    window = config.termination_window
    if window is None:
        window = max(1, schedule.T * (report.diameter or 1))

    m, n = problem.m, problem.dim
    a, b = _block(problem)
    X = initial_states(problem, config.inner_tol) if initial is None else np.array(initial, dtype=float)
    for i, agent in enumerate(problem.agents):
        if not agent.constraint.contains(X[i], 1e-7):
            raise AssumptionViolation([f"agent {i}: initial point lies outside its constraint set"])

    diag = config.diagnostics and problem.interior_point is not None
    trace = IterationTrace(m, n, full=config.trace == "full")
    sets = problem.sets

    def record_state(X):
        v = X[:, a:b].mean(axis=0)
        if trace.full:
            trace.x.append(X.copy())
        trace.v.append(v)
        trace.consensus_residual.append(float(np.linalg.norm(X[:, a:b] - v, axis=1).max()))
        trace.objectives.append([ag.objective.value(X[i]) for i, ag in enumerate(problem.agents)])
        if diag:
            vb, eps = feasible_average(v, problem.interior_point, problem.interior_radius, sets)
            trace.vbar.append(vb)
            trace.infeasibility.append(eps)

    record_state(X)
    streak = 0
    converged = False
    total = 0.0
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for k in range(config.max_iterations):
            Xn, Z, E = step(problem, schedule, steps, k, X, config.inner_tol, pool)
            en = np.linalg.norm(E, axis=1)
            total += float(en @ en)
            change = np.linalg.norm(Xn - X, axis=1)
            if trace.full:
                trace.z.append(Z)
                trace.e.append(E)
            trace.steps.append(steps(k))
            trace.error_norms.append(en.tolist())
            trace.cumulative_error.append(total)
            trace.change.append(float(change.max()))
            trace.mix_drift.append(float(np.abs(Z[:, a:b].sum(axis=0) - X[:, a:b].sum(axis=0)).max()))
            record_state(Xn)
            X = Xn
            streak = streak + 1 if change.max() <= config.iterate_tolerance else 0
            if streak >= window:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    iters = trace.iterations
    v = trace.v[-1]
    full_v = X.mean(axis=0)
    full_v[a:b] = v
    obj_vbar = None
    if diag:
        obj_vbar = float(sum(ag.objective.value(_embed(trace.vbar[-1], X.mean(axis=0), a, b))
                             for ag in problem.agents))
    reason = "tolerance" if converged else "max_iterations"
    return RunResult(X, converged, iters, trace.consensus_residual[-1], problem.total_objective(full_v),
                     obj_vbar, window, reason, trace)


def _embed(block, base, a, b):
    out = np.array(base, dtype=float)
    out[a:b] = block
    return out


def lemma5_inequality_check(trace: IterationTrace, k: int, x_star, L_bar: float,
                            problem: ProblemSpec) -> float:
    """LHS - RHS of the per-iteration descent inequality linking iterations k and k+1.

        2c sum f_i(vbar(k+1)) + sum ||e_i(k+1)||^2 + sum ||x_i(k+1) - x*||^2
          <= 2c sum f_i(x*) + sum ||x_i(k) - x*||^2 + 2 L c sum ||x_i(k+1) - vbar(k+1)||

    Non-positive whenever x* is a minimizer of the pooled problem and L_bar
    bounds the Lipschitz constants of the f_i over the X_i.
    """
    if not trace.full:
        raise ValueError("inequality check needs a full trace")
    if problem.interior_point is None:
        raise ValueError("inequality check needs an interior point")
    if problem.shared is not None:
        raise ValueError("inequality check is defined for fully coupled problems")
    if not 0 <= k < trace.iterations:
        raise IndexError(f"k={k} outside recorded iterations 0..{trace.iterations - 1}")
    if L_bar is None or L_bar < 0:
        raise ValueError("need a nonnegative Lipschitz bound")
    x_star = as_vector(x_star, problem.dim)
    c = trace.steps[k]
    Xk, Xn, E = trace.x[k], trace.x[k + 1], trace.e[k]
    if len(trace.vbar) > k + 1:
        vb = trace.vbar[k + 1]
    else:
        vb, _ = feasible_average(Xn.mean(axis=0), problem.interior_point, problem.interior_radius,
                                 problem.sets)
    lhs = (2 * c * problem.total_objective(vb) + float(np.sum(E * E))
           + float(np.sum((Xn - x_star) ** 2)))
    rhs = (2 * c * problem.total_objective(x_star) + float(np.sum((Xk - x_star) ** 2))
           + 2 * L_bar * c * float(np.linalg.norm(Xn - vb, axis=1).sum()))
    return lhs - rhs


def pooled_lipschitz(problem: ProblemSpec, estimate: bool = False, **kw) -> float:
    """max_i of a Lipschitz bound of f_i over X_i (rigorous box bound, or sampled)."""
    from .model import estimate_lipschitz, lipschitz_bound
    fn = estimate_lipschitz if estimate else lipschitz_bound
    return max(fn(ag.objective, ag.constraint, **kw) for ag in problem.agents)


class CentralizedNotConverged(RuntimeError):
    pass


def centralized_solve(problem: ProblemSpec, tol: float = 1e-9, c: float = 100.0,
                      max_iterations: int = 10_000, inner_tol: float = 1e-11,
                      decrease: float = 0.0) -> np.ndarray:
    """Proximal-point iterations with constant c on sum_i f_i over the intersection of the X_i.

    Converged when a step moves less than ``tol``, or, with ``decrease`` > 0,
    when a step lowers the objective by at most ``decrease`` (relative). The
    latter is the practical rule for polyhedral problems with near-degenerate
    vertices, where the iterates creep along a face long after the value has
    settled.
    """
    if problem.shared is not None:
        raise ValueError("centralized oracle supports fully coupled problems only")
    f = Sum(tuple(ag.objective for ag in problem.agents))
    prims = [p for ag in problem.agents for p in ag.constraint.primitives()]
    X = prims[0] if len(prims) == 1 else Intersection(tuple(prims))
    x0 = X.project(np.zeros(problem.dim))
    x, ok = proximal_point(f, X, x0, c, max_iterations, tol, decrease, inner_tol)
    if not ok:
        raise CentralizedNotConverged(f"no convergence within {max_iterations} proximal-point steps")
    return x


def write_trace_csv(result: RunResult, path) -> None:
    """Rows per (k, agent): iterate components, ||e_i(k)||, consensus residual, objective."""
    tr = result.trace
    if not tr.full:
        raise ValueError("CSV trace needs trace='full'")
    n = tr.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "agent"] + [f"x{j}" for j in range(n)] + ["e_norm", "consensus_residual", "objective"])
        for k, X in enumerate(tr.x):
            for i in range(tr.m):
                e = repr(tr.error_norms[k - 1][i]) if k > 0 else ""
                w.writerow([k, i] + [repr(float(v)) for v in X[i]]
                           + [e, repr(tr.consensus_residual[k]), repr(float(tr.objectives[k][i]))])
