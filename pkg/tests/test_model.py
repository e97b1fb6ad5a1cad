import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import grid, grid_inside

from distprox.model import (L1, AgentSpec, Ball, Box, DimensionError, Halfspace, InfeasibleSetError,
                            Intersection, Linear, ProblemSpec, QuadraticDiagonal, Sum, check_nonempty,
                            contains, distance, estimate_lipschitz, evaluate, lipschitz_bound, project,
                            subgradient)


# ---------------------------------------------------------------------------
# objectives


def test_evaluate_examples():
    assert evaluate(L1(1.0), [0.0, 0.0]) == 0.0
    assert evaluate(Linear([1.0, 2.0]), [3.0, 4.0]) == 11.0
    assert evaluate(Sum((L1(1.0), Linear([1.0, 0.0]))), [-1.0, 2.0]) == 2.0


def test_subgradient_examples():
    np.testing.assert_array_equal(subgradient(L1(1.0), [0.0, 2.0]), [0.0, 1.0])
    np.testing.assert_allclose(subgradient(QuadraticDiagonal([2.0], [0.0]), [3.0]), [6.0])
    g = np.array([1.5, -2.0, 0.25])
    for x in ([0, 0, 0], [5, -1, 2]):
        np.testing.assert_array_equal(subgradient(Linear(g), x), g)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate(Linear([1.0, 2.0]), [1.0])
    with pytest.raises(DimensionError):
        Box([0.0], [1.0]).project([1.0, 2.0])


def test_invalid_terms():
    with pytest.raises(ValueError):
        QuadraticDiagonal([-1.0], [0.0])
    with pytest.raises(ValueError):
        L1(-0.1)


vec3 = st.lists(st.floats(-5, 5), min_size=3, max_size=3).map(np.array)


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, vec3, st.floats(0, 2))
def test_subgradient_matches_central_differences(x, h, g, lam):
    # keep away from the kinks of the L1 term
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    f = Sum((QuadraticDiagonal(np.abs(h), g), L1(lam), Linear(h)))
    step = 1e-6
    fd = np.array([(f.value(x + step * e) - f.value(x - step * e)) / (2 * step) for e in np.eye(3)])
    np.testing.assert_allclose(f.subgradient(x), fd, atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(vec3, vec3, vec3)
def test_sum_is_exact_sum_of_members(x, h, g):
    terms = (QuadraticDiagonal(np.abs(h), g), L1(0.3), Linear(h))
    assert Sum(terms).value(x) == sum(t.value(x) for t in terms)


# ---------------------------------------------------------------------------
# sets


def test_contains_examples():
    assert contains(Box([0, 0], [1, 1]), [0.5, 0.5], 0.0)
    assert contains(Halfspace([1, 0], 0), [1e-9, 5], 1e-8)
    assert not contains(Intersection((Box([0], [2]), Box([1], [3]))), [0.5], 0.0)


def test_project_examples():
    np.testing.assert_array_equal(project(Box([0], [1]), [2.0]), [1.0])
    np.testing.assert_allclose(project(Halfspace([1, 0], 1), [3.0, 4.0]), [1.0, 4.0])
    quadrant = Intersection((Halfspace([-1, 0], 0), Halfspace([0, -1], 0)))
    np.testing.assert_allclose(project(quadrant, [-1.0, -1.0]), [0.0, 0.0], atol=1e-10)


def test_distance_examples():
    assert distance(Ball([0, 0], 1), [2.0, 0.0]) == pytest.approx(1.0)
    assert distance(Box([0], [1]), [-3.0]) == pytest.approx(3.0)
    assert distance(Halfspace([1, 1], 1), [0.2, 0.3]) == 0.0


def test_box_validation():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        Ball([0.0], -1.0)


def test_empty_intersection_is_detected():
    empty = Intersection((Halfspace([1.0], 0.0), Halfspace([-1.0], -1.0), Box([-5.0], [5.0])), max_sweeps=2000)
    with pytest.raises(InfeasibleSetError):
        empty.project([3.0])
    with pytest.raises(InfeasibleSetError):
        check_nonempty(empty)
    with pytest.raises(InfeasibleSetError):
        Intersection((Box([0.0], [1.0]), Box([2.0], [3.0]))).project([0.0])


def _grid_projection(s, z, lo, hi, h):
    pts = grid(lo, hi, h)
    pts = pts[grid_inside(s, pts)]
    return pts[np.argmin(np.linalg.norm(pts - z, axis=1))]


def _random_intersection(rng, n):
    members = [Box(rng.uniform(-2, -0.5, n), rng.uniform(0.5, 2, n))]
    for _ in range(int(rng.integers(1, 3))):
        a = rng.normal(size=n)
        members.append(Halfspace(a, rng.uniform(0.1, 1.0)))
    if rng.random() < 0.5:
        members.append(Ball(rng.uniform(-0.2, 0.2, n), rng.uniform(0.8, 1.5)))
    return Intersection(tuple(members))


@pytest.mark.parametrize("seed", range(6))
def test_intersection_projection_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    n = 1 if seed < 2 else 2
    s = _random_intersection(rng, n)
    z = rng.uniform(-3, 3, n)
    x = s.project(z)
    coarse = _grid_projection(s, z, [-2.0] * n, [2.0] * n, 1e-2)
    h = 1e-4
    oracle = _grid_projection(s, z, coarse - 0.05, coarse + 0.05, h)
    assert s.contains(x, 1e-9)
    D, Dg = np.linalg.norm(z - x), np.linalg.norm(z - oracle)
    assert D <= Dg + 1e-9
    assert Dg <= D + 1e-3
    # strong convexity of the squared distance turns the value gap into a point gap
    assert np.linalg.norm(x - oracle) <= np.sqrt(Dg**2 - D**2) + 1e-9


def _set_strategy():
    def build(kind, seed):
        rng = np.random.default_rng(seed)
        if kind == "box":
            return Box(rng.uniform(-2, 0, 3), rng.uniform(0, 2, 3))
        if kind == "halfspace":
            return Halfspace(rng.normal(size=3), rng.normal())
        if kind == "ball":
            return Ball(rng.normal(size=3), rng.uniform(0.1, 2))
        return _random_intersection(rng, 3)
    return st.builds(build, st.sampled_from(["box", "halfspace", "ball", "intersection"]),
                     st.integers(0, 10_000))


@settings(max_examples=80, deadline=None)
@given(_set_strategy(), vec3)
def test_projection_idempotent(s, z):
    p = s.project(z)
    np.testing.assert_allclose(s.project(p), p, atol=1e-10)


@settings(max_examples=80, deadline=None)
@given(_set_strategy(), vec3, vec3)
def test_projection_nonexpansive(s, z1, z2):
    d = np.linalg.norm(s.project(z1) - s.project(z2))
    assert d <= np.linalg.norm(z1 - z2) + 1e-8


@settings(max_examples=40, deadline=None)
@given(_set_strategy(), vec3)
def test_distance_consistent_with_projection(s, z):
    p = s.project(z)
    assert s.contains(p, 1e-8)
    assert s.distance(z) == pytest.approx(np.linalg.norm(z - p), abs=1e-9)


# ---------------------------------------------------------------------------
# Lipschitz constants and problems


def test_lipschitz_bound_dominates_sampled_estimate():
    f = Sum((QuadraticDiagonal([2.0, 0.5], [1.0, -1.0]), L1(0.3)))
    X = Intersection((Box([-1, -1], [1, 2]), Halfspace([1, 1], 1.5)))
    bound = lipschitz_bound(f, X)
    est = estimate_lipschitz(f, X, samples=500, margin=1.0)
    assert 0 < est <= bound
    with pytest.raises(ValueError):
        lipschitz_bound(f, Halfspace([1, 0], 0))


def test_problem_validation_reports_issues():
    unbounded = AgentSpec(Linear([1.0]), Halfspace([1.0], 1.0))
    ok = AgentSpec(Linear([1.0]), Box([0.0], [2.0]), initial=[3.0])
    issues = ProblemSpec((unbounded, ok)).validate()
    assert any("not compact" in msg for msg in issues)
    assert any("initial point" in msg for msg in issues)
    bad_ball = ProblemSpec((AgentSpec(L1(1.0), Box([0.0], [1.0])),), interior_point=[0.9], interior_radius=0.5)
    assert any("interior ball" in msg for msg in bad_ball.validate())
    good = ProblemSpec((AgentSpec(L1(1.0), Box([0.0], [1.0])),), interior_point=[0.5], interior_radius=0.4)
    assert good.validate() == []


def test_problem_rejects_mixed_dimensions():
    with pytest.raises(DimensionError):
        ProblemSpec((AgentSpec(L1(1.0), Box([0.0], [1.0])), AgentSpec(L1(1.0), Box([0, 0], [1, 1]))))
