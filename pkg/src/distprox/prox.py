"""Per-agent proximal local solve.

Each agent minimizes ``f(x) + ||z - x||^2 / (2c)`` over its constraint set.
All objectives in :mod:`distprox.model` are separable, so the problem is

    minimize  0.5 * sum_j w_j x_j^2 - r . x + lam * ||x||_1   over X

with ``w = h + 1/c`` and ``r = z/c - g`` (the penalty only touches the shared
block when a private block is declared). When X is a box the minimizer is
computed coordinate by coordinate in closed form. Otherwise proximal
gradient runs on the smooth part with step ``1 / max(w)``, and the proximal
map of ``lam ||.||_1`` plus the constraint comes from Dykstra sweeps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (ConvexSet, DykstraPieces, InfeasibleSetError, Intersection, ObjectiveTerm,
                    as_vector, dykstra_run)


class ProxNotConverged(RuntimeError):
    def __init__(self, message, best_iterate):
        super().__init__(message)
        self.best_iterate = best_iterate


@dataclass(frozen=True, eq=False)
class ProxRequest:
    objective: ObjectiveTerm
    constraint: ConvexSet
    anchor: np.ndarray
    step: float
    tol: float = 1e-8
    max_inner_iters: int = 20_000
    # 1 where the quadratic penalty applies, 0 on private coordinates
    penalty_mask: np.ndarray | None = None
    start: np.ndarray | None = None
    certify: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step c must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        n = self.constraint.dim
        object.__setattr__(self, "anchor", as_vector(self.anchor, n))
        if self.penalty_mask is not None:
            object.__setattr__(self, "penalty_mask", as_vector(self.penalty_mask, n))


@dataclass
class ProxResult:
    minimizer: np.ndarray
    inner_iterations: int
    fixed_point_residual: float
    optimality_certificate: float
    method: str


def soft_threshold(z, theta: float) -> np.ndarray:
    if theta < 0:
        raise ValueError("threshold must be nonnegative")
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - theta, 0.0)


def _box_minimize(w, r, lam, lo, hi):
    x = np.empty_like(r)
    pos = w > 0
    x[pos] = np.clip(soft_threshold(r[pos], lam) / w[pos], lo[pos], hi[pos])
    for j in np.flatnonzero(~pos):
        # piecewise-linear in x_j: the minimum sits at an endpoint or at 0
        cands = [c for c in (lo[j], hi[j], min(max(0.0, lo[j]), hi[j])) if np.isfinite(c)]
        slope_out = (r[j] > lam and not np.isfinite(hi[j])) or (r[j] < -lam and not np.isfinite(lo[j]))
        if slope_out or not cands:
            raise ValueError("local problem is unbounded in a coordinate without curvature")
        vals = [-r[j] * c + lam * abs(c) for c in cands]
        x[j] = cands[int(np.argmin(vals))]
    return x


def _pieces(X: ConvexSet) -> DykstraPieces:
    if isinstance(X, Intersection):
        return X.pieces()
    return DykstraPieces([X], X.dim)


def _prox_l1_set(y, theta, pieces, tol, max_iter):
    """prox of theta*||.||_1 + indicator(X) at y.

    The separable L1-plus-box part is the first piece of a Dykstra sweep over
    the remaining balls and halfspaces.
    """
    lo, hi = pieces.lo, pieces.hi

    def first(u):
        return np.clip(soft_threshold(u, theta), lo, hi)

    if not pieces.balls and not len(pieces.h):
        return first(y), 1
    x, sweeps, ok = dykstra_run(pieces, y, tol, max_iter, first=first)
    if not ok:
        residual = pieces.residual(x)
        if residual > np.sqrt(tol):
            raise InfeasibleSetError(f"constraint set appears empty (residual {residual:.3g})")
        raise ProxNotConverged("Dykstra sweeps did not converge", x)
    return x, sweeps


def _gradient_minimize(w, r, lam, X, tol, max_iter, start):
    """Proximal gradient on 0.5 sum w x^2 - r.x with step 1/max(w)."""
    if not np.any(w > 0):
        raise ValueError("local problem has no curvature; the quadratic penalty is missing")
    pieces = _pieces(X)
    gamma = 1.0 / w.max()
    if np.all(w == w.max()):
        # the gradient step lands on r / w from any point, so one proximal step is exact
        return _prox_l1_set(r * gamma, gamma * lam, pieces, tol, max_iter)
    x = X.project(start) if start is not None else _prox_l1_set(r * gamma, gamma * lam, pieces, tol, max_iter)[0]
    total = 0
    for _ in range(max_iter):
        y = x - gamma * (w * x - r)
        x_new, inner = _prox_l1_set(y, gamma * lam, pieces, 0.1 * tol, max_iter)
        total += inner
        if np.abs(x_new - x).max() <= tol:
            return x_new, total
        x = x_new
    raise ProxNotConverged("proximal-gradient inner solve did not converge", x)


def _minimize(w, r, lam, X, tol, max_iter, start=None):
    pieces = _pieces(X)
    if not pieces.balls and not len(pieces.h):
        return _box_minimize(w, r, lam, pieces.lo, pieces.hi), 1, "closed_form"
    x, its = _gradient_minimize(w, r, lam, X, tol, max_iter, start)
    return x, its, "proximal_gradient"


def _feasible_probes(X, center, spread, k, seed):
    rng = np.random.default_rng(seed)
    lo, hi = X.bounding_box()
    lo = np.where(np.isfinite(lo), lo, center - spread)
    hi = np.where(np.isfinite(hi), hi, center + spread)
    return [X.project(rng.uniform(lo, hi)) for _ in range(k)]


def local_solve(req: ProxRequest) -> ProxResult:
    X = req.constraint
    n = X.dim
    sep = req.objective.separable(n)
    mask = np.ones(n) if req.penalty_mask is None else req.penalty_mask
    c = req.step
    w = sep.h + mask / c
    r = mask * req.anchor / c - sep.g
    x, its, method = _minimize(w, r, sep.lam, X, req.tol, req.max_inner_iters, req.start)

    fp_res = 0.0
    cert = 0.0
    if req.certify:
        # fixed-point residual of the proximal-gradient map at x
        gamma = 1.0 / w.max()
        y = x - gamma * (w * x - r)
        tx, _, _ = _minimize(np.full(n, 1.0 / gamma), y / gamma, sep.lam, X, req.tol * 1e-2,
                             req.max_inner_iters)
        fp_res = float(np.linalg.norm(x - tx))
        # variational inequality: x minimizes f(u) - (1/c) (z - x) . u over X
        lin = mask * (req.anchor - x) / c
        base = req.objective.value(x) - lin @ x
        spread = 1.0 + np.abs(req.anchor - x).max()
        probes = _feasible_probes(X, x, spread, 100, req.seed)
        cert = max(0.0, max(base - (req.objective.value(y_) - lin @ y_) for y_ in probes))
    return ProxResult(x, its, fp_res, cert, method)


def local_solve_partial(req: ProxRequest, shared: tuple[int, int], shared_anchor=None):
    """Joint minimization over the shared and private blocks; penalty on the shared block only.

    Returns ``(y, u)``: the shared block and the private coordinates (in index order).
    """
    n = req.constraint.dim
    a, b = shared
    mask = np.zeros(n)
    mask[a:b] = 1.0
    anchor = req.anchor.copy()
    if shared_anchor is not None:
        anchor[a:b] = as_vector(shared_anchor, b - a)
    full = ProxRequest(req.objective, req.constraint, anchor, req.step, req.tol,
                       req.max_inner_iters, mask, req.start, req.certify, req.seed)
    x = local_solve(full).minimizer
    return x[a:b], np.concatenate([x[:a], x[b:]])

