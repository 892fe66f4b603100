"""Offline template generation over a training set.

Pipeline: collect the layer-k boxes of verifiable training regions, cluster
them, join each cluster into a template, repair failing templates with
half-space cuts, greedily merge nearby templates, keep the largest ``m``,
and optionally widen the survivors while they still verify.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .backends import check_domain, lift, propagate, verify_shape
from .exact import exact_verify
from .network import Network, check_postcondition
from .regions import RegionSpec
from .relax import Box, Star, alpha_box, as_box, box_contains_box, box_join, scale_box
from .sharing import Template, TemplateSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HalfSpaceParams:
    kappa: float = 0.05
    n_hs: int = 30
    kappa_step: float = 0.02
    # Expansion uses its own schedule: start κ and row budget per step.
    expand_kappa: float = 0.4
    expand_rows: int = 10

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.n_hs < 0 or self.expand_rows < 0:
            raise ValueError("constraint budgets must be nonnegative")


@dataclass(frozen=True)
class ClusterParams:
    avg_size: int = 50
    seed: int = 0
    max_iter: int = 100
    mode: str = "centers"  # or "verifier"
    neighbors: int = 10


@dataclass(eq=False)
class ProofGroup:
    template: Union[Box, Star]
    members: list
    sources: list = field(default_factory=list)

    @property
    def box(self) -> Box:
        return as_box(self.template)

    def covers_members(self, tol: float = 1e-12) -> bool:
        return all(box_contains_box(m, self.box, tol) for m in self.members)


@dataclass(frozen=True, eq=False)
class VerifiableShape:
    box: Box
    index: int


class HalfSpaceError(RuntimeError):
    """A counterexample lies inside the member hull, so no cut can remove it."""


def collect_verifiable(
    net: Network,
    inputs: Sequence,
    labels: Sequence[int],
    build: Callable,
    k: int,
    domain: str = "box",
) -> list:
    """Layer-``k`` boxes of the training regions whose full propagation verifies."""
    domain = check_domain(domain, ("box", "zono"))
    out = []
    for idx, (x, label) in enumerate(zip(inputs, labels)):
        spec = build(x)
        region = spec.region if isinstance(spec, RegionSpec) else spec
        mid = propagate(net, lift(region, domain), 0, k, domain)
        if check_postcondition(propagate(net, mid, k, None, domain), int(label)):
            out.append(VerifiableShape(as_box(mid) if isinstance(mid, Box) else alpha_box(mid), idx))
    return out


def _kmeans(points: np.ndarray, n: int, params: ClusterParams) -> np.ndarray:
    from sklearn.cluster import KMeans  # slow import, only needed here

    km = KMeans(n_clusters=n, init="k-means++", n_init=1, max_iter=params.max_iter,
                random_state=params.seed)
    return km.fit_predict(points)


def constant_shift_embedding(D: np.ndarray) -> np.ndarray:
    """Euclidean embedding of a symmetric dissimilarity matrix ``D``.

    Centers ``-D**2 / 2``, shifts the spectrum by its most negative
    eigenvalue so the Gram matrix is positive semidefinite, and factors it.
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    Q = np.eye(n) - np.full((n, n), 1.0 / n)
    S = -0.5 * Q @ (D ** 2) @ Q
    S = (S + S.T) / 2.0
    vals, vecs = np.linalg.eigh(S)
    shift = min(vals.min(), 0.0)
    vals = vals - shift
    # The shift adds a constant to off-diagonal squared distances only.
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


def verifier_distances(net: Network, shapes: Sequence[Box], k: int, label: int, neighbors: int,
                    budget: int = 20000) -> np.ndarray:
    """``exp(e)`` for each shape and its nearest neighbours, ``e`` the exact error of their join."""
    n = len(shapes)
    centers = np.array([s.center for s in shapes])
    D = np.full((n, n), np.nan)
    np.fill_diagonal(D, 0.0)
    for i in range(n):
        dist = np.linalg.norm(centers - centers[i], axis=1)
        order = [j for j in np.argsort(dist, kind="stable") if j != i][:neighbors]
        for j in order:
            if np.isnan(D[i, j]):
                e = exact_verify(net, box_join([shapes[i], shapes[j]]), k, label, budget).error
                D[i, j] = D[j, i] = math.exp(min(e, 700.0))
    known = D[~np.isnan(D)]
    D[np.isnan(D)] = known.max() if known.size else 1.0
    return D


def cluster_shapes(shapes: Sequence[Box], params: ClusterParams = ClusterParams(),
                   net: Optional[Network] = None, k: Optional[int] = None,
                   label: Optional[int] = None) -> list:
    """Partition shape indices into about ``len(shapes) / avg_size`` groups."""
    if not shapes:
        raise ValueError("no shapes to cluster")
    n = len(shapes)
    n_clusters = min(n, max(1, math.ceil(n / params.avg_size)))
    if n_clusters == 1:
        return [list(range(n))]
    if params.mode == "verifier":
        if net is None or k is None or label is None:
            raise ValueError("verifier-mode clustering needs the network, layer and label")
        points = constant_shift_embedding(verifier_distances(net, shapes, k, label, params.neighbors))
    elif params.mode == "centers":
        points = np.array([s.center for s in shapes])
    else:
        raise ValueError(f"unknown clustering mode {params.mode!r}")
    assign = _kmeans(points, n_clusters, params)
    groups = [list(np.flatnonzero(assign == c)) for c in range(n_clusters)]
    return [[int(i) for i in g] for g in groups if g]


def _member_support(C: np.ndarray, members: Sequence[Box]) -> float:
    return max(float(C @ m.center + np.abs(C) @ m.width) for m in members)


def add_halfspace_constraints(
    net: Network,
    t: Union[Box, Star],
    members: Sequence[Box],
    label: int,
    k: int,
    kappa: float,
    backend: str = "exact",
    max_rows: int = 30,
    budget: int = 20000,
) -> Optional[Star]:
    """Cut counterexamples out of ``t`` until it verifies; ``None`` after ``max_rows`` rows.

    Each row has normal ``z_V - a`` (``a`` the box center) and offset
    ``kappa * c_p + (1 - kappa) * c_z``, where ``c_p`` is the members' support
    value and ``c_z`` the counterexample's.  Raises ``HalfSpaceError`` when a
    counterexample is not separable from the members.
    """
    star = t if isinstance(t, Star) else Star(t)
    a = star.box.center
    rows = 0
    while True:
        res = verify_shape(net, star, k, label, backend, budget, witness=True)
        if res.verified:
            return star
        if rows >= max_rows:
            return None
        pending = [z for z in res.counterexamples if star.contains_point(z, 1e-9)]
        if not pending:
            return None
        for z in pending:
            if rows >= max_rows:
                break
            if not star.contains_point(z, 1e-9):
                continue  # already removed by a row added this round
            C = np.asarray(z, dtype=np.float64) - a
            c_z = float(C @ z)
            c_p = _member_support(C, members)
            if c_z <= c_p:
                raise HalfSpaceError(
                    f"counterexample support {c_z:.6g} does not exceed member support {c_p:.6g}"
                )
            star = star.add_constraint(C, kappa * c_p + (1.0 - kappa) * c_z)
            rows += 1


def _certify(net, box, members, label, k, backend, hs: HalfSpaceParams, budget, kappa=None,
             max_rows=None, base: Optional[Star] = None):
    """Verified template for ``box`` (keeping ``base``'s rows), or ``None``."""
    shape = base.with_box(box) if base is not None else box
    if verify_shape(net, shape, k, label, backend, budget).verified:
        return shape
    rows = hs.n_hs if max_rows is None else max_rows
    if rows == 0:
        return None
    try:
        return add_halfspace_constraints(net, shape, members, label, k,
                                         hs.kappa if kappa is None else kappa,
                                         backend, rows, budget)
    except HalfSpaceError as exc:
        log.debug("half-space synthesis aborted: %s", exc)
        return None


def gen_templates_offline(
    net: Network,
    inputs: Sequence,
    labels: Sequence[int],
    build: Callable,
    k: int,
    m: int,
    label: int,
    backend: str = "exact",
    hs: HalfSpaceParams = HalfSpaceParams(),
    cluster: ClusterParams = ClusterParams(),
    domain: str = "box",
    budget: int = 20000,
) -> tuple:
    """Templates at layer ``k`` for one class; returns ``(TemplateSet, groups)``.

    Only training inputs labelled ``label`` are used.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    backend = check_domain(backend)
    picked = [i for i, y in enumerate(labels) if int(y) == label]
    shapes = collect_verifiable(net, [inputs[i] for i in picked], [label] * len(picked), build, k, domain)
    if not shapes:
        return TemplateSet(m=m, label=label), []
    boxes = [s.box for s in shapes]
    sources = [picked[s.index] for s in shapes]

    groups: list = []
    for g in cluster_shapes(boxes, cluster, net, k, label):
        members = [boxes[i] for i in g]
        t = _certify(net, box_join(members), members, label, k, backend, hs, budget)
        if t is not None:
            groups.append(ProofGroup(t, members, [sources[i] for i in g]))

    groups = _merge(net, groups, label, k, backend, hs, budget)
    # Largest groups first; ties keep creation order.
    best = sorted(range(len(groups)), key=lambda i: -len(groups[i].members))[:m]
    groups = [groups[i] for i in sorted(best, key=lambda i: (-len(groups[i].members), i))]
    ts = TemplateSet(m=m, label=label)
    for i, g in enumerate(groups):
        ts.add(Template(g.template, k, {"label": label, "members": len(g.members), "group": i}, backend))
    return ts, groups


def _merge(net, groups, label, k, backend, hs, budget) -> list:
    """Greedy pairwise merging, closest template centers first."""
    alive = dict(enumerate(groups))
    counter = itertools.count(len(groups))
    heap: list = []

    def push(i, j):
        d = float(np.linalg.norm(alive[i].box.center - alive[j].box.center))
        heapq.heappush(heap, (d, min(i, j), max(i, j)))

    for i, j in itertools.combinations(sorted(alive), 2):
        push(i, j)
    while heap:
        _, i, j = heapq.heappop(heap)
        if i not in alive or j not in alive:
            continue
        members = alive[i].members + alive[j].members
        t = _certify(net, box_join(members), members, label, k, backend, hs, budget)
        if t is None:
            continue
        merged = ProofGroup(t, members, alive[i].sources + alive[j].sources)
        del alive[i], alive[j]
        new = next(counter)
        alive[new] = merged
        for other in sorted(alive):
            if other != new:
                push(other, new)
    return [alive[i] for i in sorted(alive)]


def expand_template(
    net: Network,
    shape: Union[Box, Star],
    D,
    label: int,
    k: int,
    backend: str = "exact",
    max_iters: int = 10,
    hs: HalfSpaceParams = HalfSpaceParams(),
    budget: int = 20000,
) -> tuple:
    """Widen ``shape``'s box by ``D`` while it verifies; returns ``(shape, accepted steps)``."""
    factors = np.asarray(D, dtype=np.float64)
    if np.any(factors < 1):
        raise ValueError("expansion factors must be at least 1")
    cur = shape
    accepted = 0
    for it in range(max_iters):
        base = cur if isinstance(cur, Star) else None
        box = scale_box(as_box(cur), factors)
        nxt = _certify(net, box, [as_box(cur)], label, k, backend, hs, budget,
                       kappa=min(1.0, hs.expand_kappa + hs.kappa_step * it),
                       max_rows=hs.expand_rows, base=base)
        if nxt is None:
            break
        cur = nxt
        accepted += 1
    return cur, accepted


def expand_templates(
    net: Network,
    ts: TemplateSet,
    D,
    label: Optional[int] = None,
    backend: Optional[str] = None,
    max_iters: int = 10,
    hs: HalfSpaceParams = HalfSpaceParams(),
    budget: int = 20000,
) -> TemplateSet:
    label = ts.label if label is None else label
    if label is None:
        raise ValueError("a label is needed to re-verify expanded templates")
    out = TemplateSet(m=ts.m, label=ts.label, anchor_unverified=ts.anchor_unverified)
    for t in ts:
        be = check_domain(backend or t.backend)
        shape, steps = expand_template(net, t.shape, D, label, t.layer, be, max_iters, hs, budget)
        prov = dict(t.provenance, expansions=t.provenance.get("expansions", 0) + steps)
        out.add(Template(shape, t.layer, prov, be))
    return out


def overlap_stats(pairs: Sequence, p: float) -> tuple:
    """Fractions of box pairs overlapping / contained in at least ``p * d`` coordinates."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not pairs:
        return 0.0, 0.0
    o = c = 0
    for a, b in pairs:
        if a.dim != b.dim:
            raise ValueError("boxes in a pair must have equal dimension")
        need = p * a.dim
        overlap = (a.lower <= b.upper) & (b.lower <= a.upper)
        a_in_b = (b.lower <= a.lower) & (a.upper <= b.upper)
        b_in_a = (a.lower <= b.lower) & (b.upper <= a.upper)
        o += int(overlap.sum() >= need)
        c += int(max(a_in_b.sum(), b_in_a.sum()) >= need)
    return o / len(pairs), c / len(pairs)
