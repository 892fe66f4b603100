import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from certshare.lp import LinearProgram, box_bounds_of_affine, lp_solve, maximize

seeds = st.integers(0, 2**32 - 1)


def test_box_only_program():
    res = maximize([1.0, -2.0], [0, 0], [3, 1])
    assert res.feasible
    assert res.value == pytest.approx(3.0)
    np.testing.assert_allclose(res.x, [3, 0])


def test_constrained_program():
    # max x + y  s.t. x + 2y <= 4, 3x + y <= 6, 0 <= x, y <= 10  -> (1.6, 1.2)
    res = maximize([1, 1], [0, 0], [10, 10], [[1, 2], [3, 1]], [4, 6])
    assert res.value == pytest.approx(2.8)
    np.testing.assert_allclose(res.x, [1.6, 1.2], atol=1e-9)


def test_infeasible_program():
    res = maximize([1.0], [0], [1], [[-1.0]], [-2.0])
    assert not res.feasible
    assert res.x is None


def test_needs_phase_one():
    # z = lower violates the row, so artificial variables are needed.
    res = maximize([-1.0, -1.0], [0, 0], [5, 5], [[-1, -1]], [-3])
    assert res.value == pytest.approx(-3.0)


def test_degenerate_program():
    # Many redundant rows through the optimum.
    A = [[1, 1], [1, 1], [2, 2], [1, 0], [0, 1]]
    b = [1, 1, 2, 1, 1]
    res = maximize([1, 1], [0, 0], [1, 1], A, b)
    assert res.value == pytest.approx(1.0)


def test_build_validation():
    with pytest.raises(ValueError):
        LinearProgram.build([1.0], [0], [np.inf])
    with pytest.raises(ValueError):
        LinearProgram.build([1.0], [1], [0])
    with pytest.raises(ValueError):
        LinearProgram.build([1.0, 1.0], [0, 0], [1, 1], [[1.0]], [1.0])


def test_box_bounds_of_affine_star_example():
    # The star {0 <= z <= 3, -z1 + z2 <= 2} under -z1 + z2 + 0.
    lo, hi = box_bounds_of_affine([[-1, 1]], [0], [0, 0], [3, 3], [[-1, 1]], [2])
    assert lo[0] == pytest.approx(-3.0)
    assert hi[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        box_bounds_of_affine([[1, 0]], [0], [0, 0], [1, 1], [[1, 0]], [-1])


@settings(max_examples=80, deadline=None)
@given(seeds)
def test_simplex_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    m = int(rng.integers(0, 8))
    c = rng.normal(size=n)
    lo = rng.uniform(-2, 0, n)
    hi = lo + rng.uniform(0, 3, n)
    A = rng.normal(size=(m, n))
    # Mix of feasible and infeasible systems.
    point = rng.uniform(lo, hi)
    b = A @ point + rng.uniform(-0.5, 1.0, m)
    ours = lp_solve(LinearProgram.build(c, lo, hi, A if m else None, b if m else None))
    ref = linprog(-c, A_ub=A if m else None, b_ub=b if m else None,
                  bounds=list(zip(lo, hi)), method="highs")
    assert ours.feasible == (ref.status == 0)
    if ours.feasible:
        assert ours.value == pytest.approx(-ref.fun, abs=1e-7)
        assert np.all(ours.x >= lo - 1e-9) and np.all(ours.x <= hi + 1e-9)
        if m:
            assert np.all(A @ ours.x <= b + 1e-7)
