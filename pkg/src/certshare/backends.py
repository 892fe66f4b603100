"""Verification backends for regions and intermediate-layer templates.

``box`` and ``zono`` propagate a relaxation and check the postcondition;
``exact`` runs the branch-and-bound verifier.  A Star is handled by bounding
its first affine image with LPs over the half-spaces, after which the plain
relaxation takes over.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .exact import DEFAULT_BUDGET, exact_verify, output_error
from .lp import box_bounds_of_affine, maximize
from .network import Network, check_postcondition, propagate_box, propagate_zono
from .relax import (
    Box,
    Star,
    Zonotope,
    affine_box,
    affine_zono,
    alpha_box,
    relu_box,
    relu_zono,
)

DOMAINS = ("box", "zono")
BACKENDS = ("box", "zono", "exact")


def check_domain(name: str, allowed=BACKENDS) -> str:
    name = {"zonotope": "zono"}.get(name, name)
    if name not in allowed:
        raise ValueError(f"unknown backend {name!r}; expected one of {', '.join(allowed)}")
    return name


@dataclass(eq=False)
class Outcome:
    verified: bool
    # Layer-k points the verifier could not rule out, most violating first.
    counterexamples: list = field(default_factory=list)
    error: Optional[float] = None


def lift(region: Union[Box, Zonotope], domain: str):
    """Input relaxation of ``region`` in the given domain."""
    if domain == "box":
        return region if isinstance(region, Box) else alpha_box(region)
    return Zonotope.from_box(region) if isinstance(region, Box) else region


def propagate(net: Network, shape, from_k: int, to_k: Optional[int], domain: str):
    if domain == "box":
        return propagate_box(net, lift(shape, "box"), from_k, to_k)
    return propagate_zono(net, lift(shape, "zono"), from_k, to_k)


def star_first_step(net: Network, star: Star, k: int, domain: str):
    """Relaxation at layer ``k + 1`` with LP-tight pre-activation bounds."""
    blk = net.blocks[k]
    box = star.box
    lo, hi = box_bounds_of_affine(blk.weights, blk.bias, box.lower, box.upper, star.C, star.c)
    if domain == "box":
        pre = affine_box(box, blk.weights, blk.bias)
        tight = Box.from_bounds(np.maximum(pre.lower, lo), np.minimum(pre.upper, hi))
        return relu_box(tight) if blk.relu else tight
    z = affine_zono(Zonotope.from_box(box), blk.weights, blk.bias)
    if blk.relu:
        return relu_zono(z, lo, hi)
    # No ReLU to absorb the tighter bounds; fall back to their box.
    zl, zu = z.bounds()
    return Zonotope.from_box(Box.from_bounds(np.maximum(zl, lo), np.minimum(zu, hi)))


def propagate_shape(net: Network, shape: Union[Box, Star, Zonotope], k: int, domain: str):
    """Relaxation of ``N_{k+1:L}(shape)``."""
    if isinstance(shape, Star) and shape.num_constraints:
        first = star_first_step(net, shape, k, domain)
        return propagate(net, first, k + 1, None, domain)
    if isinstance(shape, Star):
        shape = shape.box
    return propagate(net, shape, k, None, domain)


def verify_shape(
    net: Network,
    shape: Union[Box, Star, Zonotope],
    k: int,
    label: int,
    backend: str = "zono",
    budget: int = DEFAULT_BUDGET,
    pairwise: bool = False,
    witness: bool = False,
) -> Outcome:
    """Does ``N_{k+1:L}`` classify all of ``shape`` as ``label``?

    With ``witness`` a failing box/zono check also reports the layer-k point
    maximising a linearised error (see ``linear_witness``).
    """
    backend = check_domain(backend)
    if backend == "exact":
        region = shape if not isinstance(shape, Zonotope) else alpha_box(shape)
        res = exact_verify(net, region, k, label, budget, decide=True)
        cex = [c.point for c in res.counterexamples]
        return Outcome(bool(res.verified), cex, res.error)
    out = propagate_shape(net, shape, k, backend)
    ok = check_postcondition(out, label, pairwise)
    if ok or not witness:
        return Outcome(ok)
    region = shape if not isinstance(shape, Zonotope) else alpha_box(shape)
    return Outcome(False, [linear_witness(net, region, k, label)])


def linear_witness(net: Network, region: Union[Box, Star], k: int, label: int) -> np.ndarray:
    """Point of ``region`` maximising the error along the interval sign pattern.

    The most violated competing class ``j`` gives ``e_j - e_label`` at the
    logits.  Walking back, each ReLU keeps a coefficient only where the
    extreme the sign asks for is positive and not clamped; the affine maps
    transpose it.  An LP then maximises the resulting linear form.
    """
    star = region if isinstance(region, Star) else Star(region)
    # Pre-activation boxes of the later layers.
    pre = []
    cur = star.box
    for blk in net.blocks[k:]:
        p = affine_box(cur, blk.weights, blk.bias)
        pre.append(p)
        cur = relu_box(p) if blk.relu else p
    out = pre[-1]
    gap = out.upper - out.lower[label]
    gap[label] = -np.inf
    j = int(np.argmax(gap))
    g = np.zeros(out.dim)
    g[j] += 1.0
    g[label] -= 1.0
    for idx in range(len(pre) - 1, -1, -1):
        blk = net.blocks[k + idx]
        if blk.relu:
            p = pre[idx]
            extreme = np.where(g > 0, p.upper, p.lower)
            g = np.where(extreme > 0, g, 0.0)
        g = blk.weights.T @ g
    box = star.box
    res = maximize(g, box.lower, box.upper,
                   star.C if star.num_constraints else None,
                   star.c if star.num_constraints else None)
    if not res.feasible:
        raise ValueError("region is empty")
    return res.x


def witness_error(net: Network, z, k: int, label: int) -> float:
    return output_error(net, z, label, k)
