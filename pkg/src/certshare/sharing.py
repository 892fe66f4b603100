"""Online proof sharing: template generation, matching and the sharing loop."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .backends import check_domain, lift, propagate, verify_shape
from .network import Network, check_postcondition
from .regions import (
    PixelMask,
    RegionSpec,
    geometric_template_anchors,
    linf_region,
    masked_linf_region,
)
from .relax import Box, Star, Zonotope, alpha_box, as_box, contained_in, scale_box


@dataclass(frozen=True, eq=False)
class Template:
    shape: Union[Box, Star]
    layer: int
    provenance: dict = field(default_factory=dict)
    backend: str = "zono"

    @property
    def box(self) -> Box:
        return as_box(self.shape)


@dataclass(eq=False)
class TemplateSet:
    templates: dict = field(default_factory=dict)
    m: Optional[int] = None
    label: Optional[int] = None
    # Set when the anchor input itself could not be verified.
    anchor_unverified: bool = False

    def add(self, t: Template) -> None:
        bucket = self.templates.setdefault(t.layer, [])
        if self.m is not None and len(bucket) >= self.m:
            raise ValueError(f"layer {t.layer} already holds m={self.m} templates")
        bucket.append(t)

    @property
    def layers(self) -> list:
        return sorted(k for k, v in self.templates.items() if v)

    def at(self, k: int) -> list:
        return list(self.templates.get(k, []))

    def __iter__(self):
        for k in self.layers:
            yield from self.templates[k]

    def __len__(self) -> int:
        return sum(len(v) for v in self.templates.values())

    def merged(self, other: "TemplateSet") -> "TemplateSet":
        out = TemplateSet(m=None, label=self.label)
        for t in list(self) + list(other):
            out.add(t)
        return out


@dataclass(frozen=True)
class SearchParams:
    """Relaxation and binary-search settings shared by the generators."""

    domain: str = "zono"
    template_backend: Optional[str] = None
    eps_range: tuple = (0.0, 1.0)
    eps_iters: int = 20
    beta_range: tuple = (0.0, 2.0)
    beta_iters: int = 12
    clip: bool = True
    budget: int = 20000

    @property
    def backend(self) -> str:
        return self.template_backend or self.domain


@dataclass(frozen=True)
class RegionOutcome:
    index: int
    kind: str
    verified: bool
    matched_layer: Optional[int]
    matched_template: Optional[str]
    deepest_layer: int
    micros: int


@dataclass(eq=False)
class SharingReport:
    outcomes: list
    num_layers: int
    timings: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.outcomes)

    @property
    def verified(self) -> set:
        return {o.index for o in self.outcomes if o.verified}

    @property
    def matched(self) -> list:
        return [o for o in self.outcomes if o.matched_layer is not None]

    @property
    def match_rate(self) -> float:
        return len(self.matched) / len(self.outcomes) if self.outcomes else 0.0

    def match_rate_per_layer(self) -> dict:
        counts: dict = {}
        for o in self.matched:
            counts[o.matched_layer] = counts.get(o.matched_layer, 0) + 1
        n = max(len(self.outcomes), 1)
        return {k: v / n for k, v in sorted(counts.items())}

    @property
    def fallback_count(self) -> int:
        return len(self.outcomes) - len(self.matched)

    def summary(self) -> dict:
        n = len(self.outcomes)
        return {
            "regions": n,
            "verified": len(self.verified),
            "matched": len(self.matched),
            "fallback": self.fallback_count,
            "match_rate": self.match_rate,
            "match_rate_per_layer": {str(k): v for k, v in self.match_rate_per_layer().items()},
            "expected_layer_count": expected_layer_count(self),
        }


def bin_search_max(pred: Callable[[float], bool], lo: float, hi: float, iters: int) -> tuple:
    """Largest tested value where ``pred`` held, and whether any value held.

    ``pred`` need not be monotone, which is why the answer is best-effort:
    bisection keeps the last success and narrows towards the first failure.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if not pred(lo):
        return lo, False
    if pred(hi):
        return hi, True
    good, bad = lo, hi
    for _ in range(iters):
        mid = (good + bad) / 2.0
        if pred(mid):
            good = mid
        else:
            bad = mid
    return good, True


def _verifies_region(net, region: Box, label: int, domain: str) -> bool:
    return check_postcondition(propagate(net, region, 0, None, domain), label)


def _templates_from_region(net, build, label, layers, params: SearchParams, provenance: dict):
    """One eps search over ``build(eps)`` and a beta search per layer."""
    domain = check_domain(params.domain, ("box", "zono"))
    backend = check_domain(params.backend)
    lo, hi = params.eps_range
    eps, ok = bin_search_max(
        lambda e: _verifies_region(net, build(e).region, label, domain), lo, hi, params.eps_iters
    )
    if not ok:
        return None
    region = build(eps).region
    out = []
    rel = lift(region, domain)
    cur = 0
    for k in sorted(layers):
        rel = propagate(net, rel, cur, k, domain)
        cur = k
        base = as_box(rel) if isinstance(rel, Box) else alpha_box(rel)

        def check(b, base=base, k=k):
            return verify_shape(net, scale_box(base, b), k, label, backend, params.budget).verified

        beta, found = bin_search_max(check, *params.beta_range, params.beta_iters)
        if not found:
            continue
        prov = dict(provenance, epsilon=eps, beta=beta)
        out.append(Template(scale_box(base, beta), k, prov, backend))
    return out


def _check_layers(net: Network, layers: Sequence[int]) -> list:
    layers = sorted(set(int(k) for k in layers))
    for k in layers:
        if not 1 <= k < net.num_layers:
            raise ValueError(f"template layer {k} is not a hidden layer (1..{net.num_layers - 1})")
    return layers


def gen_templates_online(
    net: Network,
    x,
    label: int,
    masks: Sequence[PixelMask],
    layers: Sequence[int],
    params: SearchParams = SearchParams(),
) -> TemplateSet:
    """Templates from masked l-inf balls around ``x``: one per mask and layer."""
    if not masks:
        raise ValueError("at least one mask is required")
    layers = _check_layers(net, layers)
    ts = TemplateSet(m=len(masks), label=label)
    for i, mask in enumerate(masks):
        made = _templates_from_region(
            net, lambda e, mask=mask: masked_linf_region(x, mask, e, params.clip),
            label, layers, params, {"mask": i, "mask_size": len(mask)},
        )
        if made is None:
            ts.anchor_unverified = True
            continue
        for t in made:
            ts.add(t)
    return ts


def gen_templates_geometric(
    net: Network,
    x,
    shape,
    label: int,
    gamma: tuple,
    m: int,
    layers: Sequence[int],
    params: SearchParams = SearchParams(),
) -> TemplateSet:
    """Templates from l-inf balls around ``m`` rotated anchors of ``x``."""
    layers = _check_layers(net, layers)
    ts = TemplateSet(m=m, label=label)
    for anchor, angle in geometric_template_anchors(x, shape, gamma, m):
        made = _templates_from_region(
            net, lambda e, a=anchor: linf_region(a, e, params.clip),
            label, layers, params, {"angle": angle},
        )
        if made is None:
            ts.anchor_unverified = True
            continue
        for t in made:
            ts.add(t)
    return ts


def match(s: Union[Box, Zonotope], ts: TemplateSet, k: int, tol: float = 0.0):
    """First template at layer ``k`` (generation order) containing ``s``, with its position."""
    for i, t in enumerate(ts.at(k)):
        if t.box.dim != s.dim:
            raise ValueError(f"shape dimension {s.dim} != template dimension {t.box.dim}")
        if contained_in(s, t.shape, tol):
            return i, t
    return None


def _labels(label, n: int) -> list:
    if isinstance(label, (int, np.integer)):
        return [int(label)] * n
    label = list(label)
    if len(label) != n:
        raise ValueError(f"{len(label)} labels for {n} regions")
    return label


def _run(net, regions, labels, ts, domain, tol, threads):
    domain = check_domain(domain, ("box", "zono"))
    L = net.num_layers
    layers = ts.layers if ts is not None else []

    def one(idx):
        spec = regions[idx]
        region = spec.region if isinstance(spec, RegionSpec) else spec
        kind = spec.kind if isinstance(spec, RegionSpec) else "box"
        t0 = time.perf_counter()
        rel = lift(region, domain)
        cur = 0
        for k in layers:
            rel = propagate(net, rel, cur, k, domain)
            cur = k
            hit = match(rel, ts, k, tol)
            if hit is not None:
                t1 = time.perf_counter()
                return RegionOutcome(idx, kind, True, k, f"{k}:{hit[0]}", k,
                                     int(round((t1 - t0) * 1e6))), t1 - t0, 0.0
        t1 = time.perf_counter()
        out = propagate(net, rel, cur, None, domain)
        ok = check_postcondition(out, labels[idx])
        t2 = time.perf_counter()
        return RegionOutcome(idx, kind, ok, None, None, L, int(round((t2 - t0) * 1e6))), t1 - t0, t2 - t1

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(len(regions))))
    else:
        results = [one(i) for i in range(len(regions))]
    outcomes = [r[0] for r in results]
    timings = {"matching": sum(r[1] for r in results), "fallback": sum(r[2] for r in results)}
    return SharingReport(outcomes, L, timings)


def verify_with_sharing(
    net: Network,
    regions: Sequence,
    label,
    ts: TemplateSet,
    domain: str = "zono",
    tol: float = 0.0,
    threads: int = 1,
) -> SharingReport:
    """Verify regions, stopping at the first template layer whose template contains them."""
    labels = _labels(label, len(regions))
    for k in ts.layers:
        if not 1 <= k < net.num_layers:
            raise ValueError(f"template layer {k} is not a hidden layer")
    return _run(net, regions, labels, ts, domain, tol, threads)


def verify_baseline(net: Network, regions: Sequence, label, domain: str = "zono",
                    threads: int = 1) -> SharingReport:
    return _run(net, regions, _labels(label, len(regions)), None, domain, 0.0, threads)


def expected_layer_count(report: SharingReport) -> float:
    """Mean over regions of the deepest layer each one was propagated to."""
    if not report.outcomes:
        return 0.0
    return float(np.mean([o.deepest_layer for o in report.outcomes]))
