"""Time-varying communication networks as schedules of doubly stochastic matrices.

Weight matrices use the row convention ``W[i, j]`` = weight agent ``i``
applies to agent ``j``'s iterate, so one mixing round is ``Z = W @ X`` with
agents stacked as rows of ``X``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class NetworkSchedule:
    generator: Callable[[int], np.ndarray]
    m: int
    eta: float
    T: int
    period: int | None = None
    kind: str = "custom"
    # the matrices of one period, kept for serialization of periodic schedules
    matrices: tuple = field(default=(), repr=False)

    def matrix(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError("iteration index must be nonnegative")
        return self.generator(k)

    __call__ = matrix


@dataclass
class ConnectivityReport:
    strongly_connected: bool
    diameter: int | None
    max_recurrence_gap: int
    edges: list[tuple[int, int]]
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_weights(A, eta: float) -> list[str]:
    """Doubly stochastic, diagonal >= eta and every positive entry >= eta."""
    A = np.asarray(A, dtype=float)
    out = []
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return [f"weight matrix must be square, got shape {A.shape}"]
    if not 0 < eta < 1:
        out.append(f"eta={eta} outside (0, 1)")
    if np.any(A < 0):
        out.append("negative weight")
    rows = np.abs(A.sum(axis=1) - 1.0)
    cols = np.abs(A.sum(axis=0) - 1.0)
    if rows.max() > STOCHASTIC_TOL:
        out.append(f"row {int(rows.argmax())} sums to {A.sum(axis=1)[rows.argmax()]!r} (not row-stochastic)")
    if cols.max() > STOCHASTIC_TOL:
        out.append(f"column {int(cols.argmax())} sums to {A.sum(axis=0)[cols.argmax()]!r} (not column-stochastic)")
    # tolerance on eta comparisons matches the stochasticity tolerance
    if np.any(np.diag(A) < eta - STOCHASTIC_TOL):
        out.append(f"diagonal weight below eta={eta}")
    pos = A[A > 0]
    if pos.size and pos.min() < eta - STOCHASTIC_TOL:
        out.append(f"positive weight {pos.min()!r} below eta={eta}")
    return out


def _edges(A) -> set[tuple[int, int]]:
    """Directed edges (j, i): agent i receives from agent j, self-loops excluded."""
    i, j = np.nonzero(np.asarray(A) > 0)
    return {(int(b), int(a)) for a, b in zip(i, j) if a != b}


def _bfs(adj, src, m):
    dist = [-1] * m
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def graph_diameter(m: int, edges) -> tuple[bool, int | None]:
    adj = [[] for _ in range(m)]
    for j, i in edges:
        adj[j].append(i)
    diam = 0
    for s in range(m):
        dist = _bfs(adj, s, m)
        if min(dist) < 0:
            return False, None
        diam = max(diam, max(dist))
    return True, diam


def validate_connectivity(schedule: NetworkSchedule, horizon: int | None = None) -> ConnectivityReport:
    """Check strong connectivity of the recurring graph and the intercommunication bound T.

    For periodic schedules the recurring edge set is exact (one period) and
    recurrence gaps are measured cyclically. For other schedules the recurring
    set is approximated by the edges seen in the second half of the horizon.
    """
    m, T, period = schedule.m, schedule.T, schedule.period
    if horizon is None:
        horizon = max(T, 2 * (period or 1), 2)
    violations = []
    if horizon < T:
        violations.append(f"horizon {horizon} shorter than T={T}")
    if period:
        horizon = max(horizon, 2 * period)
        horizon = -(-horizon // period) * period
        window = 0
    else:
        window = horizon // 2

    seen = [_edges(schedule.matrix(k)) for k in range(horizon)]
    recurring = set().union(*seen[window:])

    connected, diameter = graph_diameter(m, recurring)
    if not connected:
        violations.append("recurring communication graph is not strongly connected")

    max_gap = 0
    for e in recurring:
        times = [k for k in range(window, horizon) if e in seen[k]]
        if period:
            gaps = np.diff(times + [times[0] + horizon])
        else:
            gaps = np.diff([window - 1] + times + [horizon])
        max_gap = max(max_gap, int(gaps.max()))
    if max_gap > T:
        violations.append(f"an edge recurs only every {max_gap} iterations, exceeding T={T}")
    return ConnectivityReport(connected, diameter if connected else None, max_gap,
                              sorted(recurring), violations)


def phi_product(schedule: NetworkSchedule, k: int, s: int) -> np.ndarray:
    """Transition matrix W(k) W(k-1) ... W(s) in the row convention.

    Entry ``[i, j]`` is the weight of ``x_j(s)`` in agent ``i``'s state after
    the mixing rounds ``s..k``; for k == s this is W(k).
    """
    if k < s or s < 0:
        raise ValueError(f"need k >= s >= 0, got k={k}, s={s}")
    out = schedule.matrix(s).copy()
    for t in range(s + 1, k + 1):
        out = schedule.matrix(t) @ out
    return out


def contraction_bound(m: int, eta: float, T: int) -> tuple[float, float]:
    """Constants (lam, q) with |Phi(k,s)_ij - 1/m| <= lam * q**(k-s)."""
    if m < 2 or not 0 < eta < 1 or T < 1:
        raise ValueError(f"degenerate inputs m={m}, eta={eta}, T={T}")
    B = (m - 1) * T
    etab = eta ** B
    lam = 2.0 * (1.0 + eta ** (-B)) / (1.0 - etab)
    q = (1.0 - etab) ** (1.0 / B)
    return lam, q


def _ring_phase(m: int, phase: int) -> np.ndarray:
    W = np.zeros((m, m))
    for a in range(phase, m + phase, 2):
        i, j = a % m, (a + 1) % m
        W[i, i] = W[j, j] = W[i, j] = W[j, i] = 0.5
    return W


def _periodic(mats: Sequence[np.ndarray]):
    mats = tuple(np.array(M, dtype=float) for M in mats)
    for M in mats:
        M.setflags(write=False)
    p = len(mats)
    return mats, (lambda k: mats[k % p].copy())


def make_schedule(kind: str, m: int, matrices=None, eta: float | None = None,
                  T: int | None = None) -> NetworkSchedule:
    if kind == "complete_uniform":
        if m < 1:
            raise ValueError("need at least one agent")
        mats, gen = _periodic([np.full((m, m), 1.0 / m)])
        return NetworkSchedule(gen, m, eta or (1.0 / m if m > 1 else 0.5), T or 1, 1, kind, mats)
    if kind == "ring_alternating_pairs":
        if m < 2 or m % 2:
            raise ValueError("ring of alternating pairs needs an even number of agents")
        phases = [_ring_phase(m, 0)] if m == 2 else [_ring_phase(m, 0), _ring_phase(m, 1)]
        mats, gen = _periodic(phases)
        return NetworkSchedule(gen, m, eta or 0.5, T or len(phases), len(phases), kind, mats)
    if kind == "explicit_periodic":
        if not matrices:
            raise ValueError("explicit schedule needs at least one matrix")
        mats, gen = _periodic(matrices)
        if any(M.shape != (m, m) for M in mats):
            raise ValueError(f"explicit matrices must be {m}x{m}")
        if eta is None:
            pos = np.concatenate([M[M > 0] for M in mats])
            eta = float(min(pos.min(), 0.5)) if pos.size else 0.5
            eta = min(eta, 1 - 1e-12)
        sched = NetworkSchedule(gen, m, eta, T or len(mats), len(mats), kind, mats)
        if T is None:
            # tightest bound observed over two periods
            rep = validate_connectivity(sched, 2 * len(mats))
            sched = NetworkSchedule(gen, m, eta, max(1, rep.max_recurrence_gap), len(mats), kind, mats)
        return sched
    raise ValueError(f"unknown schedule kind {kind!r}")


def random_periodic_schedule(m: int, rng: np.random.Generator, max_period: int = 4) -> NetworkSchedule:
    """Random connected periodic schedule of convex combinations of identity and permutations."""
    while True:
        period = int(rng.integers(1, max_period + 1))
        mats = []
        for _ in range(period):
            k = int(rng.integers(1, 3))
            weights = rng.dirichlet(np.ones(k + 1)) * 0.8 + 0.2 / (k + 1)
            W = weights[0] * np.eye(m)
            for wgt in weights[1:]:
                W = W + wgt * np.eye(m)[rng.permutation(m)]
            mats.append(W)
        sched = make_schedule("explicit_periodic", m, mats)
        if validate_connectivity(sched).strongly_connected and not any(
                validate_weights(M, sched.eta) for M in mats):
            return sched
