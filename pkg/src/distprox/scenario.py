"""Scenario-approach violation bounds, sample-size inversion and Monte-Carlo checks.

Every bound is evaluated in the log domain (``math.lgamma`` binomials) so the
calculators stay finite up to N ~ 1e7 and d ~ 1e3. Values are clamped to
[0, 1]; a clamped value is reported as ``trivial``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import optimize, stats

from .model import AgentSpec, ConvexSet, Intersection, ObjectiveTerm, ProblemSpec


def log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _one_minus_root(log_ratio: float, power: int) -> float:
    """1 - exp(log_ratio / power), clamped to [0, 1]."""
    return min(1.0, max(0.0, -math.expm1(log_ratio / power)))


def epsilon_common(N: int, d: int, beta: float) -> float:
    """Violation level for N scenarios shared by all agents, support bound d."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if d < 0:
        raise ValueError("d must be nonnegative")
    if N <= d:
        return 1.0
    return _one_minus_root(math.log(beta) - log_binom(N, d), N - d)


def log_binomial_cdf(N: int, kmax: int, eps: float) -> float:
    """log P[Binomial(N, eps) <= kmax], summed in the log domain."""
    if kmax < 0:
        return -math.inf
    if eps <= 0:
        return 0.0
    if eps >= 1:
        return 0.0 if kmax >= N else -math.inf
    le, l1e = math.log(eps), math.log1p(-eps)
    terms = [log_binom(N, k) + k * le + (N - k) * l1e for k in range(min(kmax, N) + 1)]
    top = max(terms)
    return top + math.log(sum(math.exp(t - top) for t in terms))


def epsilon_common_improved(N: int, d: int, beta: float) -> float:
    """Root in eps of sum_{k<d} C(N,k) eps^k (1-eps)^(N-k) = beta."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if d < 1:
        raise ValueError("improved bound needs d >= 1")
    if N < d:
        return 1.0
    lb = math.log(beta)

    def g(e):
        return log_binomial_cdf(N, d - 1, e) - lb

    lo, hi = 0.0, 1.0 - 1e-16
    if g(hi) > 0:
        return 1.0
    return float(optimize.brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500))


def epsilon_i_k(N_i: int, beta_i: float, d: int, k: int) -> float:
    """Per-agent level when k of the d support constraints belong to the agent."""
    if not 0 <= k <= d:
        raise ValueError(f"k={k} outside 0..{d}")
    if N_i <= k:
        return 1.0
    return _one_minus_root(math.log(beta_i / (d + 1)) - log_binom(N_i, k), N_i - k)


@dataclass
class ScenarioConfig:
    N: list[int]
    beta: float
    d: int
    betas: list[float] | None = None

    def __post_init__(self):
        self.N = [int(n) for n in self.N]
        if any(n < 1 for n in self.N):
            raise ValueError("sample counts must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.d < 0:
            raise ValueError("d must be nonnegative")
        if self.betas is None:
            self.betas = [self.beta / self.m] * self.m
        self.betas = [float(b) for b in self.betas]
        if len(self.betas) != self.m:
            raise ValueError("need one confidence share per agent")
        if any(not 0 < b < 1 for b in self.betas):
            raise ValueError("confidence shares must lie in (0, 1)")
        if abs(sum(self.betas) - self.beta) > 1e-15 * max(1.0, self.m):
            raise ValueError(f"confidence shares sum to {sum(self.betas)!r}, not beta={self.beta!r}")

    @classmethod
    def uniform(cls, m: int, N: int, beta: float, d: int) -> "ScenarioConfig":
        return cls([N] * m, beta, d)

    @property
    def m(self) -> int:
        return len(self.N)


@dataclass
class EpsilonReport:
    value: float
    method: str
    inputs: dict
    per_agent: list[float] | None = None
    allocation: list[int] | None = None
    trivial: bool = False

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def report_common(N: int, d: int, beta: float, improved: bool = False) -> EpsilonReport:
    fn = epsilon_common_improved if improved else epsilon_common
    v = fn(N, d, beta)
    return EpsilonReport(v, "common_improved" if improved else "common",
                         {"N": N, "d": d, "beta": beta}, trivial=v >= 1.0)


def epsilon_naive(cfg: ScenarioConfig) -> EpsilonReport:
    per = [epsilon_common(n, cfg.d, b) for n, b in zip(cfg.N, cfg.betas)]
    total = sum(per)
    return EpsilonReport(min(1.0, total), "naive", _inputs(cfg), per_agent=per, trivial=total >= 1.0)


def _inputs(cfg):
    return {"N": list(cfg.N), "beta": cfg.beta, "betas": list(cfg.betas), "d": cfg.d}


def epsilon_table(cfg: ScenarioConfig) -> np.ndarray:
    """table[i, k] = epsilon_i(k) for k = 0..d."""
    return np.array([[epsilon_i_k(n, b, cfg.d, k) for k in range(cfg.d + 1)]
                     for n, b in zip(cfg.N, cfg.betas)])


def epsilon_tight(cfg: ScenarioConfig) -> EpsilonReport:
    """Exact max of sum_i eps_i(d_i) over nonnegative integers with sum d_i <= d.

    Budget dynamic programme: best[r] is the largest partial sum using at most
    r support constraints over the agents processed so far.
    """
    table = epsilon_table(cfg)
    d = cfg.d
    best = np.zeros(d + 1)
    choice = []
    for row in table:
        # cand[r, k] = best[r - k] + row[k] for k <= r
        cand = np.full((d + 1, d + 1), -np.inf)
        for k in range(d + 1):
            cand[k:, k] = best[: d + 1 - k] + row[k]
        pick = cand.argmax(axis=1)
        choice.append(pick)
        best = cand[np.arange(d + 1), pick]
    r = int(np.argmax(best))
    value = float(best[r])
    alloc = []
    for pick in reversed(choice):
        k = int(pick[r])
        alloc.append(k)
        r -= k
    alloc.reverse()
    return EpsilonReport(min(1.0, value), "tight", _inputs(cfg),
                         per_agent=[float(table[i, k]) for i, k in enumerate(alloc)],
                         allocation=alloc, trivial=value >= 1.0)


class UnreachableTarget(ValueError):
    pass


def invert_sample_size(eps_target: float, beta: float, d: int, mode: str = "common",
                       m: int = 1, N_cap: int = 10**8) -> int:
    """Smallest N (shared, or per agent in ``tight_uniform`` mode) whose bound is <= eps_target."""
    if not 0 < eps_target < 1 or not 0 < beta < 1:
        raise ValueError("eps_target and beta must lie in (0, 1)")
    if mode == "common":
        def level(N):
            return epsilon_common(N, d, beta)
    elif mode == "tight_uniform":
        def level(N):
            return epsilon_tight(ScenarioConfig.uniform(m, N, beta, d)).value
    else:
        raise ValueError(f"unknown mode {mode!r}")

    lo = d  # level(lo) == 1 > target
    hi = max(d + 1, 2 * d + 1)
    while level(hi) > eps_target:
        lo = hi
        hi *= 2
        if hi > N_cap:
            if level(N_cap) > eps_target:
                raise UnreachableTarget(f"target {eps_target} not reached below N={N_cap}")
            hi = N_cap
            break
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if level(mid) <= eps_target:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# uncertain constraints


@dataclass
class UncertainConstraintFamily:
    """Agent constraint sets X_i(delta) together with a sampler for delta.

    ``constraint(i, delta)`` builds X_i(delta); ``draw(rng, size)`` returns
    i.i.d. samples; ``violation_mask(i, x, deltas)`` is an optional vectorised
    test returning True where x lies outside X_i(delta).
    """

    m: int
    constraint: Callable[[int, Any], ConvexSet]
    draw: Callable[[np.random.Generator, int], np.ndarray]
    deterministic: list[ConvexSet] | None = None
    violation_mask: Callable[[int, np.ndarray, np.ndarray], np.ndarray] | None = None
    scenarios: list[np.ndarray] | None = field(default=None, repr=False)

    def sample_scenarios(self, counts: Sequence[int], seed) -> list[np.ndarray]:
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(self.m)]
        return [self.draw(r, int(n)) for r, n in zip(rngs, counts)]

    def violated(self, i: int, x, deltas) -> np.ndarray:
        if self.violation_mask is not None:
            return np.asarray(self.violation_mask(i, np.asarray(x, float), deltas), dtype=bool)
        return np.array([not self.constraint(i, dl).contains(x, 1e-9) for dl in deltas])


def build_scenario_program(objectives: Sequence[ObjectiveTerm], family: UncertainConstraintFamily,
                           scenarios: Sequence[Sequence] | None = None, **problem_kw) -> ProblemSpec:
    """Agent i gets the intersection of X_i(delta) over its scenarios plus any deterministic set."""
    scenarios = family.scenarios if scenarios is None else scenarios
    if scenarios is None:
        scenarios = [[] for _ in range(family.m)]
    agents = []
    for i, f in enumerate(objectives):
        members = []
        if family.deterministic is not None:
            members.append(family.deterministic[i])
        for dl in scenarios[i]:
            s = family.constraint(i, dl)
            members.extend(s.primitives())
        if not members:
            raise ValueError(f"agent {i} ends up without any constraint")
        X = members[0] if len(members) == 1 else Intersection(tuple(members))
        agents.append(AgentSpec(f, X))
    return ProblemSpec(tuple(agents), **problem_kw)


@dataclass
class ViolationEstimate:
    rate: float
    violations: int
    samples: int
    ci_low: float
    ci_high: float
    seed: Any

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


SHARD = 10_000


def _count_shard(x, family, size, seed):
    rng = np.random.default_rng(seed)
    deltas = family.draw(rng, size)
    bad = np.zeros(size, dtype=bool)
    for i in range(family.m):
        bad |= family.violated(i, x, deltas)
    return int(bad.sum())


def estimate_violation(x, family: UncertainConstraintFamily, M: int, seed, workers: int = 1) -> ViolationEstimate:
    """Fraction of M fresh common deltas for which x leaves some agent's set X_i(delta).

    Samples are drawn in fixed-size shards with spawned seeds, so the estimate
    does not depend on ``workers``.
    """
    if M < 1:
        raise ValueError("M must be positive")
    sizes = [SHARD] * (M // SHARD) + ([M % SHARD] if M % SHARD else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            counts = list(pool.map(lambda a: _count_shard(x, family, *a), zip(sizes, seeds)))
    else:
        counts = [_count_shard(x, family, s, sd) for s, sd in zip(sizes, seeds)]
    k = sum(counts)
    lo, hi = clopper_pearson(k, M)
    return ViolationEstimate(k / M, k, M, lo, hi, seed)
