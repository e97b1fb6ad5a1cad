"""Decision vectors, convex constraint sets and separable convex objectives.

Sets form a small closed algebra (``Box``, ``Halfspace``, ``Ball`` and
``Intersection``) with exact Euclidean projections for the primitives.
Intersections are projected with Dykstra's algorithm.

Objectives (``Linear``, ``QuadraticDiagonal``, ``L1`` and ``Sum``) are all
coordinate-separable, which the local solvers rely on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np



class DimensionError(ValueError):
    pass


class InfeasibleSetError(ValueError):
    """Raised when an intersection of sets is (numerically) empty."""


def as_vector(x, n: int | None = None) -> np.ndarray:
    v = np.array(x, dtype=float).reshape(-1)
    if n is not None and v.shape[0] != n:
        raise DimensionError(f"expected dimension {n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("decision vector has non-finite entries")
    return v


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# constraint sets


class ConvexSet:
    """Base class. Subclasses are immutable."""

    dim: int

    def project(self, z, tol: float = 1e-10) -> np.ndarray:
        raise NotImplementedError

    def distance(self, z, tol: float = 1e-10) -> float:
        z = as_vector(z, self.dim)
        return float(np.linalg.norm(z - self.project(z, tol)))

    def contains(self, x, tol: float = 0.0) -> bool:
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return self.distance(x, tol=max(tol * 1e-3, 1e-12)) <= tol

    def primitives(self) -> list["ConvexSet"]:
        return [self]

    @property
    def is_polyhedral(self) -> bool:
        return all(isinstance(p, (Box, Halfspace)) for p in self.primitives())

    @property
    def is_bounded(self) -> bool:
        return any(isinstance(p, (Box, Ball)) for p in self.primitives())

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise bounds implied by the bounded members (may be infinite)."""
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for p in self.primitives():
            if isinstance(p, Box):
                lo, hi = np.maximum(lo, p.lower), np.minimum(hi, p.upper)
            elif isinstance(p, Ball):
                lo = np.maximum(lo, p.center - p.radius)
                hi = np.minimum(hi, p.center + p.radius)
        return lo, hi

    def inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows (G, h) with the set equal to {x : G x <= h}; polyhedral sets only."""
        rows, rhs = [], []
        for p in self.primitives():
            if isinstance(p, Box):
                eye = np.eye(self.dim)
                fin_u = np.isfinite(p.upper)
                fin_l = np.isfinite(p.lower)
                rows += [eye[fin_u], -eye[fin_l]]
                rhs += [p.upper[fin_u], -p.lower[fin_l]]
            elif isinstance(p, Halfspace):
                rows.append(p.normal[None, :])
                rhs.append(np.array([p.offset]))
            else:
                raise TypeError(f"{type(p).__name__} is not polyhedral")
        if not rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.vstack(rows), np.concatenate(rhs)


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("box bounds differ in dimension")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def project(self, z, tol=1e-10):
        return np.clip(as_vector(z, self.dim), self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """The set {x : normal . x <= offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = _frozen(self.normal)
        if not np.any(a):
            raise ValueError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def project(self, z, tol=1e-10):
        z = as_vector(z, self.dim)
        excess = self.normal @ z - self.offset
        if excess <= 0:
            return z
        return z - (excess / (self.normal @ self.normal)) * self.normal


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")
        object.__setattr__(self, "center", _frozen(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def project(self, z, tol=1e-10):
        z = as_vector(z, self.dim)
        r = z - self.center
        dist = np.linalg.norm(r)
        if dist <= self.radius:
            return z
        return self.center + (self.radius / dist) * r


@dataclass(frozen=True, eq=False)
class Intersection(ConvexSet):
    members: tuple

    max_sweeps: int = field(default=100_000, repr=False)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("intersection needs at least one member")
        dims = {m.dim for m in members}
        if len(dims) != 1:
            raise DimensionError(f"intersection members disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "members", members)

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def primitives(self):
        # members are immutable, so the flattened list and the stacked rows are cached
        if "_prims" not in self.__dict__:
            out = []
            for m in self.members:
                out.extend(m.primitives())
            self.__dict__["_prims"] = out
        return list(self.__dict__["_prims"])

    def inequalities(self):
        if "_rows" not in self.__dict__:
            G, h = super().inequalities()
            G.setflags(write=False)
            h.setflags(write=False)
            self.__dict__["_rows"] = (G, h)
        return self.__dict__["_rows"]

    @property
    def is_polyhedral(self) -> bool:
        if "_poly" not in self.__dict__:
            self.__dict__["_poly"] = super().is_polyhedral
        return self.__dict__["_poly"]

    def pieces(self) -> "DykstraPieces":
        if "_pieces" not in self.__dict__:
            self.__dict__["_pieces"] = DykstraPieces(self.primitives(), self.dim)
        return self.__dict__["_pieces"]

    def project(self, z, tol=1e-10):
        z = as_vector(z, self.dim)
        prims = self.primitives()
        if len(prims) == 1:
            return prims[0].project(z, tol)
        return dykstra([self], z, tol, self.max_sweeps)

    def contains(self, x, tol=0.0):
        x = as_vector(x, self.dim)
        # the intersection is at least as far as its farthest member
        worst = self.pieces().residual(x)
        if worst > tol:
            return False
        if worst == 0.0:
            return True
        return super().contains(x, tol)


# below this many halfspace rows a plain loop beats the vectorised skip scan
SMALL_ROWS = 16


class DykstraPieces:
    """An intersection split for Dykstra sweeps: one merged box, balls, stacked halfspace rows."""

    def __init__(self, sets: Sequence[ConvexSet], dim: int):
        self.lo = np.full(dim, -np.inf)
        self.hi = np.full(dim, np.inf)
        self.has_box = False
        self.balls = []
        rows, rhs = [], []
        for s in sets:
            for p in s.primitives():
                if isinstance(p, Box):
                    self.lo = np.maximum(self.lo, p.lower)
                    self.hi = np.minimum(self.hi, p.upper)
                    self.has_box = True
                elif isinstance(p, Ball):
                    self.balls.append(p)
                elif isinstance(p, Halfspace):
                    rows.append(p.normal)
                    rhs.append(p.offset)
                else:
                    raise TypeError(f"unsupported set {type(p).__name__}")
        if np.any(self.lo > self.hi):
            raise InfeasibleSetError("box members have empty intersection")
        self.G = np.array(rows).reshape(-1, dim)
        self.h = np.array(rhs, dtype=float)
        self.nrm2 = np.einsum("ij,ij->i", self.G, self.G)

    def residual(self, x) -> float:
        """Largest distance from x to a single piece."""
        r = float(np.linalg.norm(np.maximum(self.lo - x, 0) + np.maximum(x - self.hi, 0)))
        for b in self.balls:
            r = max(r, b.distance(x))
        if len(self.h):
            r = max(r, float(np.max(np.maximum(self.G @ x - self.h, 0) / np.sqrt(self.nrm2))))
        return r


def dykstra_run(pieces: DykstraPieces, z, tol: float, max_sweeps: int, first=None):
    """Cyclic Dykstra sweeps; returns (x, sweeps, converged).

    ``first`` replaces the box projection by another proximal map (it must
    include the box), which turns the sweep into the Dykstra-like scheme for
    the proximal map of a sum. A halfspace whose correction term is zero and
    which already contains the current point leaves the point unchanged, so
    such rows are skipped with one vectorised test instead of visited one
    by one. The sweep stops once no single step moves the point by more
    than ``tol``.
    """
    x = np.array(z, dtype=float)
    n = x.shape[0]
    use_first = first is not None or pieces.has_box
    p0 = np.zeros(n)
    pb = [np.zeros(n) for _ in pieces.balls]
    G, h, nrm2 = pieces.G, pieces.h, pieces.nrm2
    K = len(h)
    t = np.zeros(K)
    for sweep in range(1, max_sweeps + 1):
        move = 0.0
        if use_first:
            u = x + p0
            y = first(u) if first is not None else np.clip(u, pieces.lo, pieces.hi)
            p0 = u - y
            move = max(move, float(np.abs(y - x).max()))
            x = y
        for b, ball in enumerate(pieces.balls):
            u = x + pb[b]
            y = ball.project(u)
            pb[b] = u - y
            move = max(move, float(np.abs(y - x).max()))
            x = y
        if K <= SMALL_ROWS:
            for j in range(K):
                a = G[j]
                t_new = max((a @ x - h[j]) / nrm2[j] + t[j], 0.0)
                step = t[j] - t_new
                if step != 0.0:
                    x = x + step * a
                    move = max(move, abs(step) * float(np.abs(a).max()))
                    t[j] = t_new
            if move <= tol:
                return x, sweep, True
            continue
        j = 0
        while j < K:
            live = np.flatnonzero((t[j:] > 0) | (G[j:] @ x > h[j:]))
            if live.size == 0:
                break
            j += int(live[0])
            a = G[j]
            excess = (a @ x - h[j]) / nrm2[j] + t[j]
            t_new = max(excess, 0.0)
            step = t[j] - t_new
            if step != 0.0:
                x = x + step * a
                move = max(move, abs(step) * float(np.abs(a).max()))
            t[j] = t_new
            j += 1
        if move <= tol:
            return x, sweep, True
    return x, max_sweeps, False


def dykstra(sets: Sequence[ConvexSet], z, tol=1e-10, max_sweeps=100_000) -> np.ndarray:
    """Euclidean projection onto the intersection of ``sets`` by Dykstra's algorithm.

    Raises InfeasibleSetError when the sweeps stall far from feasibility,
    which is how an empty intersection shows up.
    """
    z = as_vector(z)
    pieces = _pieces_for(sets, z.shape[0])
    x, _, ok = dykstra_run(pieces, z, tol, max_sweeps)
    if not ok:
        residual = pieces.residual(x)
        if residual > np.sqrt(tol):
            raise InfeasibleSetError(f"Dykstra stalled with feasibility residual {residual:.3g}")
    return x


def _pieces_for(sets, dim) -> DykstraPieces:
    if len(sets) == 1 and isinstance(sets[0], Intersection):
        return sets[0].pieces()
    return DykstraPieces(sets, dim)


def flatten(s: ConvexSet) -> ConvexSet:
    prims = s.primitives()
    return prims[0] if len(prims) == 1 else Intersection(tuple(prims))


def check_nonempty(s: ConvexSet, tol: float = 1e-7, witness=None) -> None:
    """Feasibility probe.

    A ``witness`` lying in every member settles it at once. Otherwise the
    centre of the bounding box is projected and the result checked against
    every member.
    """
    if witness is not None and s.contains(witness, tol):
        return
    lo, hi = s.bounding_box()
    ref = np.zeros(s.dim)
    both = np.isfinite(lo) & np.isfinite(hi)
    ref[both] = 0.5 * (lo[both] + hi[both])
    x = s.project(ref, tol=1e-12)
    bad = max(p.distance(x) for p in s.primitives())
    if bad > tol:
        raise InfeasibleSetError(f"constraint set appears empty (residual {bad:.3g})")


def project(s: ConvexSet, z, tol: float = 1e-10) -> np.ndarray:
    return s.project(z, tol)


def distance(s: ConvexSet, z, tol: float = 1e-10) -> float:
    return s.distance(z, tol)


def contains(s: ConvexSet, x, tol: float = 0.0) -> bool:
    return s.contains(x, tol)


# ---------------------------------------------------------------------------
# objectives


@dataclass(frozen=True)
class Separable:
    """f(x) = 0.5 sum h_j x_j^2 + g . x + lam ||x||_1."""

    h: np.ndarray
    g: np.ndarray
    lam: float


class ObjectiveTerm:
    def value(self, x) -> float:
        raise NotImplementedError

    def subgradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def separable(self, n: int) -> Separable:
        raise NotImplementedError

    def __add__(self, other: "ObjectiveTerm") -> "Sum":
        return Sum((self, other))


def _check_dim(x, n):
    x = as_vector(x)
    if n is not None and x.shape[0] != n:
        raise DimensionError(f"objective has dimension {n}, point has {x.shape[0]}")
    return x


@dataclass(frozen=True, eq=False)
class Linear(ObjectiveTerm):
    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g", _frozen(self.g))

    @property
    def dim(self):
        return self.g.shape[0]

    def value(self, x):
        return float(self.g @ _check_dim(x, self.dim))

    def subgradient(self, x):
        _check_dim(x, self.dim)
        return self.g.copy()

    def separable(self, n):
        _check_dim(np.zeros(n), self.dim)
        return Separable(np.zeros(n), self.g.copy(), 0.0)


@dataclass(frozen=True, eq=False)
class QuadraticDiagonal(ObjectiveTerm):
    """0.5 * sum_j h_j x_j^2 + g . x with h >= 0."""

    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        h, g = _frozen(self.h), _frozen(self.g)
        if h.shape != g.shape:
            raise DimensionError("h and g differ in dimension")
        if np.any(h < 0):
            raise ValueError("quadratic weights must be nonnegative")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)

    @property
    def dim(self):
        return self.h.shape[0]

    def value(self, x):
        x = _check_dim(x, self.dim)
        return float(0.5 * self.h @ (x * x) + self.g @ x)

    def subgradient(self, x):
        return self.h * _check_dim(x, self.dim) + self.g

    def separable(self, n):
        _check_dim(np.zeros(n), self.dim)
        return Separable(self.h.copy(), self.g.copy(), 0.0)


@dataclass(frozen=True)
class L1(ObjectiveTerm):
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("L1 weight must be nonnegative")
        object.__setattr__(self, "weight", float(self.weight))

    dim = None

    def value(self, x):
        return self.weight * float(np.abs(as_vector(x)).sum())

    def subgradient(self, x):
        # minimum-norm element: sign(0) = 0
        return self.weight * np.sign(as_vector(x))

    def separable(self, n):
        return Separable(np.zeros(n), np.zeros(n), self.weight)


@dataclass(frozen=True, eq=False)
class Sum(ObjectiveTerm):
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        dims = {t.dim for t in self.terms if t.dim is not None}
        if len(dims) > 1:
            raise DimensionError(f"summands disagree on dimension: {sorted(dims)}")

    @property
    def dim(self):
        dims = [t.dim for t in self.terms if t.dim is not None]
        return dims[0] if dims else None

    def value(self, x):
        return float(sum(t.value(x) for t in self.terms))

    def subgradient(self, x):
        x = as_vector(x)
        out = np.zeros_like(x)
        for t in self.terms:
            out += t.subgradient(x)
        return out

    def separable(self, n):
        h, g, lam = np.zeros(n), np.zeros(n), 0.0
        for t in self.terms:
            s = t.separable(n)
            h += s.h
            g += s.g
            lam += s.lam
        return Separable(h, g, lam)


Zero = lambda: Sum(())  # noqa: E731


def evaluate(objective: ObjectiveTerm, x) -> float:
    return objective.value(x)


def subgradient(objective: ObjectiveTerm, x) -> np.ndarray:
    return objective.subgradient(x)


def lipschitz_bound(objective: ObjectiveTerm, s: ConvexSet) -> float:
    """Upper bound on the Lipschitz constant of ``objective`` over ``s``.

    Uses the bounding box of the set: for the separable form the largest
    subgradient magnitude in coordinate j is max |h_j x_j + g_j| + lam over
    the interval.
    """
    lo, hi = s.bounding_box()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("set is unbounded; no Lipschitz bound available")
    sep = objective.separable(s.dim)
    per = np.maximum(np.abs(sep.h * lo + sep.g), np.abs(sep.h * hi + sep.g)) + sep.lam
    return float(np.linalg.norm(per))


def estimate_lipschitz(objective: ObjectiveTerm, s: ConvexSet, samples: int = 1000,
                       seed: int = 0, margin: float = 1.1) -> float:
    """Sampled estimate max |f(x)-f(y)|/||x-y|| over pairs in ``s``, times ``margin``."""
    rng = np.random.default_rng(seed)
    lo, hi = s.bounding_box()
    best = 0.0
    for _ in range(samples):
        x = s.project(rng.uniform(lo, hi))
        y = s.project(rng.uniform(lo, hi))
        d = np.linalg.norm(x - y)
        if d > 1e-12:
            best = max(best, abs(objective.value(x) - objective.value(y)) / d)
    return margin * best


# ---------------------------------------------------------------------------
# agents and problems


@dataclass(frozen=True, eq=False)
class AgentSpec:
    objective: ObjectiveTerm
    constraint: ConvexSet
    initial: np.ndarray | None = None
    # (start, stop) of the block agreed on by all agents; the rest is private
    shared: tuple[int, int] | None = None

    def __post_init__(self):
        if self.initial is not None:
            x0 = _frozen(as_vector(self.initial, self.constraint.dim))
            object.__setattr__(self, "initial", x0)
        if self.shared is not None:
            a, b = (int(v) for v in self.shared)
            if not 0 <= a < b <= self.constraint.dim:
                raise ValueError(f"invalid shared block {self.shared}")
            object.__setattr__(self, "shared", (a, b))

    @property
    def dim(self) -> int:
        return self.constraint.dim


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    agents: tuple
    interior_point: np.ndarray | None = None
    interior_radius: float | None = None

    def __post_init__(self):
        agents = tuple(self.agents)
        if not agents:
            raise ValueError("problem needs at least one agent")
        object.__setattr__(self, "agents", agents)
        dims = {a.dim for a in agents}
        if len(dims) != 1:
            raise DimensionError(f"agents disagree on dimension: {sorted(dims)}")
        for a in agents:
            if a.objective.dim not in (None, a.dim):
                raise DimensionError("objective and constraint dimensions differ")
        shared = {a.shared for a in agents}
        if len(shared) != 1:
            raise ValueError("all agents must declare the same shared block")
        if self.interior_point is not None:
            object.__setattr__(self, "interior_point", _frozen(as_vector(self.interior_point, self.dim)))
            if self.interior_radius is None or self.interior_radius <= 0:
                raise ValueError("interior radius must be positive")
            object.__setattr__(self, "interior_radius", float(self.interior_radius))

    @property
    def m(self) -> int:
        return len(self.agents)

    @property
    def dim(self) -> int:
        return self.agents[0].dim

    @property
    def shared(self) -> tuple[int, int] | None:
        return self.agents[0].shared

    @property
    def sets(self) -> list[ConvexSet]:
        return [a.constraint for a in self.agents]

    def total_objective(self, x) -> float:
        return sum(a.objective.value(x) for a in self.agents)

    def validate(self, n_directions: int = 64, seed: int = 0, tol: float = 1e-9) -> list[str]:
        """Structural checks; returns human-readable violations."""
        issues = []
        for i, a in enumerate(self.agents):
            if not a.constraint.is_bounded:
                issues.append(f"agent {i}: constraint set has no Box or Ball member (not compact)")
            try:
                check_nonempty(a.constraint, witness=self.interior_point)
            except InfeasibleSetError as exc:
                issues.append(f"agent {i}: {exc}")
            if a.initial is not None and not a.constraint.contains(a.initial, 1e-8):
                issues.append(f"agent {i}: initial point lies outside its constraint set")
        if self.interior_point is not None:
            rng = np.random.default_rng(seed)
            dirs = rng.normal(size=(n_directions, self.dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            # probe slightly inside the open ball
            probes = [self.interior_point] + [self.interior_point + (1 - 1e-9) * self.interior_radius * u
                                              for u in dirs]
            for i, a in enumerate(self.agents):
                if not all(a.constraint.contains(p, tol) for p in probes):
                    issues.append(f"agent {i}: interior ball is not contained in the constraint set")
        return issues
