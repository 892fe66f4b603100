import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from certshare.backends import verify_shape
from certshare.network import classify, forward_point
from certshare.regions import enumerate_patches, linf_region, template_masks
from certshare.relax import Box, Star, scale_box
from certshare.sharing import (
    SearchParams,
    Template,
    TemplateSet,
    bin_search_max,
    expected_layer_count,
    gen_templates_geometric,
    gen_templates_online,
    match,
    verify_baseline,
    verify_with_sharing,
)
from helpers import random_net

seeds = st.integers(0, 2**32 - 1)

T1 = Box.from_bounds([0, 0], [3, 2])
INPUTS = [(0.5, 0.5), (1.0, 0.0), (1.5, 0.5), (11 / 6, 5 / 6), (1.7, 0.5)]


def example_regions():
    return [linf_region(x, 0.5) for x in INPUTS]


def test_bin_search_max():
    v, ok = bin_search_max(lambda e: e <= 0.3, 0.0, 1.0, 30)
    assert ok and v == pytest.approx(0.3, abs=1e-8) and v <= 0.3
    assert bin_search_max(lambda e: False, 0.0, 1.0, 5) == (0.0, False)
    assert bin_search_max(lambda e: True, 0.0, 1.0, 5) == (1.0, True)
    with pytest.raises(ValueError):
        bin_search_max(lambda e: True, 0.0, 1.0, 0)


def test_template_set_bookkeeping():
    ts = TemplateSet(m=1, label=0)
    ts.add(Template(T1, 1))
    with pytest.raises(ValueError):
        ts.add(Template(T1, 1))
    ts.add(Template(T1, 2))
    assert ts.layers == [1, 2] and len(ts) == 2
    assert len(ts.merged(ts)) == 4
    assert ts.at(3) == []


def test_match_returns_first_containing_template():
    ts = TemplateSet()
    ts.add(Template(Box.from_bounds([0, 0], [1, 1]), 1))
    ts.add(Template(T1, 1))
    ts.add(Template(scale_box(T1, 2.0), 1))
    i, t = match(Box.from_bounds([0.5, 0.5], [2, 1]), ts, 1)
    assert i == 1 and t.shape is T1
    assert match(Box.from_bounds([5, 5], [6, 6]), ts, 1) is None
    with pytest.raises(ValueError):
        match(Box.point([0.0]), ts, 1)


def test_running_example_sharing(running_net):
    ts = TemplateSet(label=0)
    ts.add(Template(T1, 1, backend="box"))
    regions = example_regions()
    share = verify_with_sharing(running_net, regions, 0, ts, "box")
    base = verify_baseline(running_net, regions, 0, "box")
    assert [o.matched_layer for o in share.outcomes] == [1, 1, 1, None, None]
    assert share.verified == base.verified == {0, 1, 2, 3, 4}
    assert expected_layer_count(share) == pytest.approx((3 * 1 + 2 * 3) / 5)
    assert share.match_rate == pytest.approx(0.6)
    assert share.fallback_count == 2
    assert share.outcomes[0].matched_template == "1:0"

    # The expanded template also covers x5.
    wide = TemplateSet(label=0)
    wide.add(Template(scale_box(T1, [7 / 6, 1.0]), 1, backend="box"))
    share = verify_with_sharing(running_net, regions, 0, wide, "box")
    assert [o.matched_layer for o in share.outcomes] == [1, 1, 1, None, 1]


def test_star_template_matching(running_net):
    star = Star(Box.from_bounds([0, 0], [3, 3]), [[-1.0, 1.0]], [2.0])
    ts = TemplateSet(label=0)
    ts.add(Template(star, 1, backend="box"))
    share = verify_with_sharing(running_net, example_regions(), 0, ts, "box")
    # h1(x4) = ([1,3],[0,3]) touches -x1 + x2 = 2 at its corner (1, 3), so
    # containment only holds up to rounding; h1(x5) has x1 up to 3.2.
    assert [o.matched_layer for o in share.outcomes] == [1, 1, 1, None, None]
    share = verify_with_sharing(running_net, example_regions(), 0, ts, "box", tol=1e-9)
    assert [o.matched_layer for o in share.outcomes] == [1, 1, 1, 1, None]


def test_empty_template_set_is_baseline(running_net):
    regions = example_regions()
    share = verify_with_sharing(running_net, regions, 0, TemplateSet())
    base = verify_baseline(running_net, regions, 0)
    assert share.verified == base.verified
    assert expected_layer_count(share) == running_net.num_layers
    assert expected_layer_count(verify_baseline(running_net, [], 0)) == 0.0


def test_label_and_layer_validation(running_net):
    regions = example_regions()
    with pytest.raises(ValueError):
        verify_with_sharing(running_net, regions, [0, 0], TemplateSet())
    ts = TemplateSet()
    ts.add(Template(T1, 3))
    with pytest.raises(ValueError):
        verify_with_sharing(running_net, regions, 0, ts)
    with pytest.raises(ValueError):
        verify_baseline(running_net, regions, 0, "exact")


def test_online_templates_are_verified(net_3x16, strokes):
    im = strokes[0]
    params = SearchParams()
    ts = gen_templates_online(net_3x16, im.pixels, im.label, template_masks("center_border", im.shape),
                              [2, 3], params)
    assert ts.layers == [2, 3]
    assert len(ts.at(2)) <= 2
    for t in ts:
        assert verify_shape(net_3x16, t.shape, t.layer, im.label, t.backend).verified
        assert {"epsilon", "beta", "mask"} <= set(t.provenance)
    with pytest.raises(ValueError):
        gen_templates_online(net_3x16, im.pixels, im.label, [], [2])
    with pytest.raises(ValueError):
        gen_templates_online(net_3x16, im.pixels, im.label, template_masks("linf", im.shape), [4])


def test_online_templates_with_exact_backend(net_3x16, strokes):
    im = strokes[1]
    params = SearchParams(template_backend="exact", beta_iters=4, eps_iters=6)
    ts = gen_templates_online(net_3x16, im.pixels, im.label, template_masks("linf", im.shape), [3], params)
    for t in ts:
        assert t.backend == "exact"
        assert verify_shape(net_3x16, t.shape, t.layer, im.label, "exact").verified


def test_anchor_failure_is_flagged():
    rng = np.random.default_rng(9)
    net = random_net(rng, [4, 6, 6, 3])
    x = np.full(4, 0.5)
    wrong = (classify(net, x) + 1) % 3
    ts = gen_templates_online(net, x, wrong, template_masks("linf", (1, 2, 2)), [1])
    assert ts.anchor_unverified and len(ts) == 0


def test_geometric_templates(net_3x16, strokes):
    im = strokes[2]
    ts = gen_templates_geometric(net_3x16, im.pixels, im.shape, im.label, (-2, 2), 3, [2])
    assert len(ts.at(2)) <= 3
    assert [t.provenance["angle"] for t in ts.at(2)] == sorted(t.provenance["angle"] for t in ts.at(2))


def test_threads_do_not_change_outcomes(net_3x16, strokes):
    im = strokes[3]
    regions = enumerate_patches(im.pixels, im.shape, 2)[:120]
    ts = gen_templates_online(net_3x16, im.pixels, im.label, template_masks("linf", im.shape), [2])
    a = verify_with_sharing(net_3x16, regions, im.label, ts, threads=1)
    b = verify_with_sharing(net_3x16, regions, im.label, ts, threads=4)
    strip = lambda r: [dataclasses.replace(o, micros=0) for o in r.outcomes]  # noqa: E731
    assert strip(a) == strip(b)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_sharing_superset_and_sound(seed):
    rng = np.random.default_rng(seed)
    dims = [4] + [int(v) for v in rng.integers(3, 9, size=int(rng.integers(2, 4)))] + [3]
    net = random_net(rng, dims)
    x = rng.uniform(0.2, 0.8, 4)
    label = classify(net, x)
    domain = str(rng.choice(["box", "zono"]))
    ts = gen_templates_online(net, x, label, template_masks("linf", (1, 2, 2)),
                              list(range(1, net.num_layers)), SearchParams(domain=domain, eps_iters=8))
    regions = [linf_region(x + rng.normal(0, 0.05, 4), float(rng.uniform(0, 0.1))) for _ in range(20)]
    share = verify_with_sharing(net, regions, label, ts, domain)
    base = verify_baseline(net, regions, label, domain)
    assert base.verified <= share.verified
    for o in share.matched:
        r = regions[o.index].region
        pts = rng.uniform(r.lower, r.upper, size=(300, 4))
        assert np.all(np.argmax(forward_point(net, pts), axis=1) == label)
