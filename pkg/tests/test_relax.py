import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from certshare.relax import (
    Box,
    Star,
    Zonotope,
    affine_box,
    affine_zono,
    alpha_box,
    as_box,
    as_zonotope,
    box_contains_box,
    box_join,
    contained_in,
    relu_box,
    relu_zono,
    scale_box,
    zono_in_box,
    zono_in_star,
)

seeds = st.integers(0, 2**32 - 1)


def random_box(rng, d=None):
    d = d or int(rng.integers(1, 7))
    return Box(rng.normal(size=d), rng.uniform(0, 1, size=d))


def random_zono(rng, d=None):
    d = d or int(rng.integers(1, 6))
    p = int(rng.integers(0, 6))
    return Zonotope(rng.normal(size=d), rng.normal(size=(d, p)))


def vertices(b):
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=b.dim)))
    return b.center + signs * b.width


# ------------------------------------------------------------------ examples


def test_box_bounds_roundtrip():
    b = Box.from_bounds([0, -1], [2, 3])
    np.testing.assert_array_equal(b.center, [1, 1])
    np.testing.assert_array_equal(b.width, [1, 2])
    np.testing.assert_array_equal(b.lower, [0, -1])
    np.testing.assert_array_equal(b.upper, [2, 3])


def test_box_rejects_bad_input():
    with pytest.raises(ValueError):
        Box([0.0], [-1.0])
    with pytest.raises(ValueError):
        Box([0.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        Box.from_bounds([1.0], [0.0])
    with pytest.raises(ValueError):
        Box([0.0], [np.inf])


def test_shapes_are_immutable():
    b = Box([0.0], [1.0])
    with pytest.raises(ValueError):
        b.center[0] = 3.0
    z = Zonotope([0.0], [[1.0]])
    with pytest.raises(ValueError):
        z.generators[0, 0] = 2.0


def test_affine_and_relu_box_example():
    b = Box.from_bounds([0, 0], [1, 1])
    out = affine_box(b, [[1, -1], [0, 3]], [1, -1])
    np.testing.assert_allclose(out.lower, [0, -1])
    np.testing.assert_allclose(out.upper, [2, 2])
    r = relu_box(out)
    np.testing.assert_allclose(r.lower, [0, 0])
    np.testing.assert_allclose(r.upper, [2, 2])


def test_affine_rejects_wrong_shapes():
    with pytest.raises(ValueError):
        affine_box(Box([0.0], [1.0]), [[1.0, 2.0]], [0.0])
    with pytest.raises(ValueError):
        affine_zono(Zonotope([0.0]), [[1.0]], [0.0, 1.0])


def test_relu_zono_crossing_example():
    z = Zonotope([1.0], [[2.0]])  # [-1, 3]
    r = relu_zono(z)
    lam, mu = 0.75, 0.375
    np.testing.assert_allclose(r.center, [lam * 1.0 + mu])
    np.testing.assert_allclose(r.generators, [[lam * 2.0, mu]])
    lo, hi = r.bounds()
    np.testing.assert_allclose([lo[0], hi[0]], [-0.75, 3.0])


def test_relu_zono_stable_cases():
    z = Zonotope([2.0, -3.0], [[1.0], [1.0]])
    r = relu_zono(z)
    np.testing.assert_allclose(r.center, [2.0, 0.0])
    np.testing.assert_allclose(r.generators, [[1.0], [0.0]])


def test_relu_zono_external_bounds_tighten():
    z = Zonotope([1.0], [[2.0]])
    r = relu_zono(z, lower=np.array([0.5]), upper=np.array([2.0]))
    # Lower bound positive: the neuron is treated as active.
    np.testing.assert_allclose(r.center, z.center)


def test_zonotope_from_box_skips_point_coordinates():
    z = Zonotope.from_box(Box([0.0, 1.0, 2.0], [1.0, 0.0, 0.5]))
    assert z.num_generators == 2
    b = alpha_box(z)
    np.testing.assert_allclose(b.width, [1.0, 0.0, 0.5])


def test_join_and_scale_examples():
    j = box_join([Box.from_bounds([0, 0], [2, 2]), Box.from_bounds([1, 0], [3, 0.5])])
    np.testing.assert_allclose(j.lower, [0, 0])
    np.testing.assert_allclose(j.upper, [3, 2])
    s = scale_box(j, [7 / 6, 1.0])
    np.testing.assert_allclose(s.lower, [-0.25, 0])
    np.testing.assert_allclose(s.upper, [3.25, 2])
    with pytest.raises(ValueError):
        box_join([])
    with pytest.raises(ValueError):
        scale_box(j, -1.0)


def test_star_contains_point_and_constraints():
    s = Star(Box.from_bounds([0, 0], [3, 3]), [[-1.0, 1.0]], [2.0])
    assert s.contains_point([0.0, 2.0])
    assert not s.contains_point([0.0, 3.0])
    assert not s.contains_point([4.0, 0.0])
    s2 = s.add_constraint([1.0, 0.0], 1.0)
    assert s2.num_constraints == 2 and s.num_constraints == 1
    with pytest.raises(ValueError):
        Star(Box([0.0], [1.0]), [[1.0, 1.0]], [0.0])


def test_contained_in_dispatch():
    t = Box.from_bounds([0, 0], [2, 2])
    assert contained_in(Box.from_bounds([0, 0], [1, 1]), t)
    assert contained_in(Zonotope([1.0, 1.0], [[0.5], [0.5]]), t)
    star = Star(t, [[1.0, 1.0]], [2.0])
    assert contained_in(Box.from_bounds([0, 0], [1, 1]), star)
    assert not contained_in(Box.from_bounds([0.5, 0.5], [1.5, 1.5]), star)


def test_containment_dimension_mismatch():
    with pytest.raises(ValueError):
        box_contains_box(Box([0.0], [1.0]), Box([0.0, 0.0], [1.0, 1.0]))


def test_zono_in_star_uses_correlation():
    # A thin diagonal zonotope fits a star that its bounding box does not.
    z = Zonotope([0.0, 0.0], [[1.0], [-1.0]])
    star = Star(Box.from_bounds([-1, -1], [1, 1]), [[1.0, 1.0]], [0.0])
    assert zono_in_star(z, star)
    assert not contained_in(alpha_box(z), star)


def test_as_conversions():
    b = Box([1.0], [2.0])
    assert as_box(b) is b
    assert as_box(Star(b)) is b
    z = as_zonotope(b)
    assert as_zonotope(z) is z
    np.testing.assert_allclose(as_box(z).width, [2.0])


def test_zonotope_sample_in_bounds():
    rng = np.random.default_rng(0)
    z = random_zono(rng, 3)
    pts = z.sample(500, rng)
    lo, hi = z.bounds()
    assert np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12)


# ---------------------------------------------------------------- properties


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_affine_relu_box_sound(seed):
    rng = np.random.default_rng(seed)
    b = random_box(rng)
    W = rng.normal(size=(int(rng.integers(1, 6)), b.dim))
    bias = rng.normal(size=W.shape[0])
    out = relu_box(affine_box(b, W, bias))
    pts = rng.uniform(b.lower, b.upper, size=(200, b.dim))
    img = np.maximum(pts @ W.T + bias, 0)
    assert np.all(img >= out.lower - 1e-9) and np.all(img <= out.upper + 1e-9)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_affine_box_tight_at_vertices(seed):
    rng = np.random.default_rng(seed)
    b = random_box(rng)
    W = rng.normal(size=(3, b.dim))
    bias = rng.normal(size=3)
    out = affine_box(b, W, bias)
    img = vertices(b) @ W.T + bias
    np.testing.assert_allclose(img.max(axis=0), out.upper, atol=1e-9)
    np.testing.assert_allclose(img.min(axis=0), out.lower, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_zono_transformers_sound(seed):
    rng = np.random.default_rng(seed)
    z = random_zono(rng)
    W = rng.normal(size=(int(rng.integers(1, 6)), z.dim))
    bias = rng.normal(size=W.shape[0])
    out = relu_zono(affine_zono(z, W, bias))
    pts = z.sample(400, rng)
    img = np.maximum(pts @ W.T + bias, 0)
    lo, hi = out.bounds()
    assert np.all(img >= lo - 1e-9) and np.all(img <= hi + 1e-9)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_relu_zono_is_pointwise_sound(seed):
    # Each sample's image must be reachable by some noise vector: check via
    # the per-coordinate bounds of the affine relationship to the input noise.
    rng = np.random.default_rng(seed)
    z = random_zono(rng, 1)
    r = relu_zono(z)
    e = rng.uniform(-1, 1, size=(300, z.num_generators))
    x = z.center + e @ z.generators.T
    y = np.maximum(x, 0)[:, 0]
    # The relaxed output with the same input noise and any fresh noise in
    # [-1, 1] covers y.
    base = r.center[0] + e @ r.generators[0, : z.num_generators]
    fresh = np.abs(r.generators[0, z.num_generators :]).sum()
    assert np.all(np.abs(y - base) <= fresh + 1e-9)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_alpha_commutes_with_affine_as_refinement(seed):
    rng = np.random.default_rng(seed)
    z = random_zono(rng)
    W = rng.normal(size=(3, z.dim))
    bias = rng.normal(size=3)
    assert box_contains_box(alpha_box(affine_zono(z, W, bias)),
                            affine_box(alpha_box(z), W, bias), 1e-9)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_box_partial_order(seed):
    rng = np.random.default_rng(seed)
    a = random_box(rng, 4)
    b = scale_box(a, rng.uniform(1, 2, 4))
    c = scale_box(b, rng.uniform(1, 2, 4))
    assert box_contains_box(a, a)
    assert box_contains_box(a, b) and box_contains_box(b, c) and box_contains_box(a, c)
    if box_contains_box(b, a):
        np.testing.assert_allclose(a.width, b.width)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_join_is_least_upper_bound(seed):
    rng = np.random.default_rng(seed)
    boxes = [random_box(rng, 3) for _ in range(int(rng.integers(1, 5)))]
    j = box_join(boxes)
    assert all(box_contains_box(b, j) for b in boxes)
    # Any box missing a bit of the join misses some operand.
    i = int(rng.integers(3))
    lower = j.lower.copy()
    lower[i] += 1e-6
    if lower[i] <= j.upper[i]:
        smaller = Box.from_bounds(lower, j.upper)
        assert not all(box_contains_box(b, smaller) for b in boxes)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_zono_in_box_matches_vertices(seed):
    rng = np.random.default_rng(seed)
    z = random_zono(rng, 2)
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=z.num_generators))) \
        if z.num_generators else np.zeros((1, 0))
    verts = z.center + signs @ z.generators.T
    lo, hi = verts.min(0), verts.max(0)
    # Shrink or grow each side by less than half the extent.
    shift = rng.uniform(-0.4, 0.4, size=(2, 2)) * (hi - lo)
    b = Box.from_bounds(lo + shift[0], hi - shift[1])
    oracle = bool(np.all(verts >= b.lower) and np.all(verts <= b.upper))
    assert zono_in_box(z, b, 1e-12) == oracle
