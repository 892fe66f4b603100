"""Complete verification by ReLU phase branch-and-bound with LP leaves.

The error of a region is ``max over z of max_{i != label} n_i(z) - n_label(z)``;
the region verifies iff that maximum is negative.  Nodes fix ReLU phases,
bounds come from symbolic interval propagation, and a leaf (no unstable neuron left)
is affine in the region variables, so one LP per competing class gives its
exact maximum.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .lp import maximize
from .network import Network, forward_point
from .relax import Box, Star

DEFAULT_BUDGET = 20000


@dataclass(frozen=True, eq=False)
class Counterexample:
    point: np.ndarray
    error: float


@dataclass(eq=False)
class ExactResult:
    """``verified`` is None when the node budget ran out; ``error`` is then an upper bound."""

    verified: Optional[bool]
    error: float
    counterexamples: list = field(default_factory=list)
    nodes: int = 0

    @property
    def inconclusive(self) -> bool:
        return self.verified is None


def output_error(net: Network, z, label: int, from_k: int = 0) -> float:
    out = forward_point(net, z, from_k)
    return float(np.max(np.delete(out, label)) - out[label])


class _Problem:
    """Region variables restricted to coordinates of nonzero width."""

    def __init__(self, net: Network, region: Union[Box, Star], k: int, label: int):
        box = region.box if isinstance(region, Star) else region
        if box.dim != net.dim_at(k):
            raise ValueError(f"region dimension {box.dim} != layer {k} dimension {net.dim_at(k)}")
        if k >= net.num_layers:
            raise ValueError(f"layer {k} has no layers after it to verify")
        if not 0 <= label < net.num_classes:
            raise IndexError(f"label {label} outside [0, {net.num_classes})")
        self.net, self.k, self.label = net, k, label
        self.free = np.flatnonzero(box.width > 0)
        self.base = box.center.copy()
        self.base[self.free] = 0.0
        self.lo = box.lower[self.free]
        self.hi = box.upper[self.free]
        if isinstance(region, Star) and region.num_constraints:
            self.rows = region.C[:, self.free]
            self.rhs = region.c - region.C @ self.base
        else:
            self.rows = np.zeros((0, self.free.size))
            self.rhs = np.zeros(0)
        self.blocks = net.blocks[k:]
        self.box_lower = box.lower
        self.box_upper = box.upper

    def to_region(self, y) -> np.ndarray:
        z = self.base.copy()
        z[self.free] = y
        return z


def _affine_range(A, a, lo, hi):
    Ap = np.clip(A, 0, None)
    An = np.clip(A, None, 0)
    return Ap @ lo + An @ hi + a, Ap @ hi + An @ lo + a


def _concretize(A, a, lo, hi):
    return _affine_range(A, a, lo, hi)


def _analyse(prob: _Problem, phases: list):
    """Bounds under fixed phases.

    Every activation carries lower and upper affine forms over the free
    variables (exact while no neuron is unstable; an unstable ReLU gets the
    triangle relaxation) intersected with plain interval bounds.  Returns
    ``None`` if the phases contradict the bounds, otherwise
    ``(bound, unstable, leaf, rows)``: ``rows`` are the half-spaces of the
    phases fixed so far, and ``leaf`` holds the affine output map with those
    rows once no neuron is left unstable.
    """
    lo, hi = prob.box_lower, prob.box_upper
    n_free = prob.free.size
    L_A = np.zeros((lo.size, n_free))
    L_A[prob.free, np.arange(n_free)] = 1.0
    L_a = prob.base.copy()
    U_A, U_a = L_A.copy(), L_a.copy()
    exact = True
    unstable = []
    phase_rows, phase_rhs = [], []

    for li, blk in enumerate(prob.blocks):
        W, b = blk.weights, blk.bias
        Wp = np.clip(W, 0, None)
        Wn = np.clip(W, None, 0)
        if li == len(prob.blocks) - 1:
            # Pairwise bound on n_j - n_label through the last affine map.
            D = W - W[prob.label]
            d = b - b[prob.label]
            _, err_hi = _affine_range(D, d, lo, hi)
            Dp = np.clip(D, 0, None)
            Dn = np.clip(D, None, 0)
            _, s_hi = _concretize(Dp @ U_A + Dn @ L_A, Dp @ U_a + Dn @ L_a + d, prob.lo, prob.hi)
            err_hi = np.minimum(err_hi, s_hi)
            A, a = W @ L_A, W @ L_a + b
            break
        pre_lo = Wp @ lo + Wn @ hi + b
        pre_hi = Wp @ hi + Wn @ lo + b
        nL_A, nL_a = Wp @ L_A + Wn @ U_A, Wp @ L_a + Wn @ U_a + b
        nU_A, nU_a = Wp @ U_A + Wn @ L_A, Wp @ U_a + Wn @ L_a + b
        s_lo, _ = _concretize(nL_A, nL_a, prob.lo, prob.hi)
        _, s_hi = _concretize(nU_A, nU_a, prob.lo, prob.hi)
        pre_lo = np.maximum(pre_lo, s_lo)
        pre_hi = np.minimum(pre_hi, s_hi)
        if not blk.relu:
            lo, hi = pre_lo, pre_hi
            L_A, L_a, U_A, U_a = nL_A, nL_a, nU_A, nU_a
            continue

        ph = phases[li]
        if np.any((ph > 0) & (pre_hi < 0)) or np.any((ph < 0) & (pre_lo > 0)):
            return None
        active = (ph > 0) | ((ph == 0) & (pre_lo >= 0))
        inactive = (ph < 0) | ((ph == 0) & (pre_hi <= 0))
        open_ = ~(active | inactive)

        if exact:
            for i in np.flatnonzero(ph > 0):
                phase_rows.append(-nL_A[i])
                phase_rhs.append(nL_a[i])
            for i in np.flatnonzero(ph < 0):
                phase_rows.append(nL_A[i].copy())
                phase_rhs.append(-nL_a[i])

        # Lower form: identity if active, else 0; the tighter of the two
        # standard choices would need a per-neuron area test, so keep 0.
        keep = active[:, None]
        L_A = np.where(keep, nL_A, 0.0)
        L_a = np.where(active, nL_a, 0.0)
        U_A = np.where(keep, nU_A, 0.0)
        U_a = np.where(active, nU_a, 0.0)
        for i in np.flatnonzero(open_):
            l, u = pre_lo[i], pre_hi[i]
            lam = u / (u - l)
            U_A[i] = lam * nU_A[i]
            U_a[i] = lam * (nU_a[i] - l)
            unstable.append((min(-l, u), li, int(i)))
        if open_.any():
            exact = False
        lo = np.where(active, np.maximum(pre_lo, 0.0), 0.0)
        hi = np.where(inactive, 0.0, np.maximum(pre_hi, 0.0))

    err_hi = np.delete(err_hi, prob.label)
    bound = float(err_hi.max()) if err_hi.size else -np.inf

    rows = np.array(phase_rows) if phase_rows else np.zeros((0, n_free))
    rhs = np.array(phase_rhs)
    leaf = (A, a, rows, rhs) if not unstable else None
    return bound, unstable, leaf, (rows, rhs)


def _feasible(prob: _Problem, rows: np.ndarray, rhs: np.ndarray) -> bool:
    """Whether the fixed phases leave a nonempty part of the region."""
    all_rows = np.vstack([prob.rows, rows])
    all_rhs = np.concatenate([prob.rhs, rhs])
    if prob.free.size == 0:
        return bool(np.all(all_rhs >= -1e-9))
    return maximize(np.zeros(prob.free.size), prob.lo, prob.hi, all_rows, all_rhs).feasible


def _solve_leaf(prob: _Problem, leaf):
    """Per competing class: LP maximum of ``n_j - n_label`` on the leaf."""
    A, a, rows, rhs = leaf
    all_rows = np.vstack([prob.rows, rows]) if rows.size else prob.rows
    all_rhs = np.concatenate([prob.rhs, rhs]) if rhs.size else prob.rhs
    label = prob.label
    results = []
    for j in range(A.shape[0]):
        if j == label:
            continue
        obj = A[j] - A[label]
        const = a[j] - a[label]
        if prob.free.size == 0:
            feasible = np.all(all_rhs >= -1e-9) if all_rhs.size else True
            if not feasible:
                return []
            results.append((j, float(const), np.zeros(0)))
            continue
        res = maximize(obj, prob.lo, prob.hi, all_rows if all_rhs.size else None,
                       all_rhs if all_rhs.size else None)
        if not res.feasible:
            return []
        results.append((j, res.value + float(const), res.x))
    return results


def exact_verify(
    net: Network,
    region: Union[Box, Star],
    k: int,
    label: int,
    budget: int = DEFAULT_BUDGET,
    decide: bool = False,
) -> ExactResult:
    """Decide classification invariance of ``N_{k+1:L}`` over ``region``.

    By default ``error`` is the exact maximum.  With ``decide`` nodes whose
    bound is already negative are not refined, so a verified result carries a
    negative upper bound instead; violations and counterexamples are exact in
    both modes.
    """
    prob = _Problem(net, region, k, label)
    n_relu = [blk.weights.shape[0] for blk in prob.blocks]
    root = [np.zeros(n, dtype=np.int8) for n in n_relu]

    best = -np.inf
    # Largest bound among nodes cut off by the decision threshold.
    cut = -np.inf
    found: list = []
    stack = [root]
    nodes = 0
    while stack:
        if nodes >= budget:
            pending = [r[0] for r in (_analyse(prob, p) for p in stack) if r is not None]
            bound = max([best, cut] + pending)
            return ExactResult(None, float(bound), _dedupe(found), nodes)
        phases = stack.pop()
        nodes += 1
        info = _analyse(prob, phases)
        if info is None:
            continue
        bound, unstable, leaf, (rows, rhs) = info
        if bound < best:
            continue
        if decide and bound < 0:
            cut = max(cut, bound)
            continue
        # Interval bounds rarely expose contradictory phases; an LP does.
        if leaf is None and rhs.size and not _feasible(prob, rows, rhs):
            continue
        if leaf is not None:
            for _, value, y in _solve_leaf(prob, leaf):
                best = max(best, value)
                if value >= 0:
                    z = prob.to_region(y)
                    found.append(Counterexample(z, output_error(net, z, label, k)))
            continue
        # Earliest layer with an unstable neuron, most unstable within it;
        # fixing early phases makes the later affine forms exact.
        first = min(t[1] for t in unstable)
        _, li, i = max((t for t in unstable if t[1] == first), key=lambda t: (t[0], -t[2]))
        for phase in (1, -1):
            child = [p.copy() for p in phases]
            child[li][i] = phase
            stack.append(child)

    error = best if best >= 0 else max(best, cut)
    return ExactResult(bool(error < 0), float(error), _dedupe(found), nodes)


def _dedupe(found: list) -> list:
    found = sorted(found, key=lambda c: -c.error)
    unique: list = []
    for c in found:
        if not any(np.allclose(c.point, u.point, atol=1e-9) for u in unique):
            unique.append(c)
    return unique


def exact_verify_input(net: Network, region, label: int, budget: int = DEFAULT_BUDGET,
                       decide: bool = False) -> ExactResult:
    """``exact_verify`` on an input-space region (a ``Box`` or ``RegionSpec``)."""
    box = getattr(region, "region", region)
    return exact_verify(net, box, 0, label, budget, decide)
