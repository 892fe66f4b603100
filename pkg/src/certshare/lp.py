"""Dense bounded-variable primal simplex.

Solves ``max c.z  s.t.  A z <= b,  l <= z <= u`` with finite bounds.  Two
phases with artificial variables for rows infeasible at ``z = l``; Bland's
rule for both entering and leaving choices, so degenerate problems cannot
cycle.  Sized for the small programs produced by branch-and-bound leaves.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

PIVOT_TOL = 1e-10
COST_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(cls, objective, lower, upper, A=None, b=None) -> "LinearProgram":
        objective = np.asarray(objective, dtype=np.float64)
        n = objective.shape[0]
        A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=np.float64))
        b = np.zeros(0) if b is None else np.asarray(b, dtype=np.float64).reshape(-1)
        lower = np.broadcast_to(np.asarray(lower, dtype=np.float64), (n,)).copy()
        upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), (n,)).copy()
        if A.shape != (b.shape[0], n):
            raise ValueError(f"constraint matrix {A.shape} does not match {b.shape[0]} rows x {n} vars")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("all variable bounds must be finite")
        if np.any(lower > upper):
            raise ValueError("variable bounds are not ordered")
        return cls(objective, A, b, lower, upper)


@dataclass(frozen=True, eq=False)
class LPResult:
    status: str  # "optimal" or "infeasible"
    value: float
    x: Optional[np.ndarray]

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


class _Tableau:
    def __init__(self, T, rhs, basis, lb, ub):
        self.T = T
        self.rhs = rhs
        self.basis = basis
        self.lb = lb
        self.ub = ub
        self.at_upper = np.zeros(T.shape[1], dtype=bool)

    def values(self) -> np.ndarray:
        x = np.where(self.at_upper, self.ub, self.lb)
        upper_cols = np.flatnonzero(self.at_upper)
        xb = self.rhs - self.T[:, upper_cols] @ self.ub[upper_cols] if upper_cols.size else self.rhs.copy()
        x[self.basis] = xb
        return x

    def pivot(self, r: int, j: int) -> None:
        T = self.T
        piv = T[r, j]
        T[r] /= piv
        self.rhs[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        nz = np.flatnonzero(np.abs(col) > 0)
        if nz.size:
            T[nz] -= np.outer(col[nz], T[r])
            self.rhs[nz] -= col[nz] * self.rhs[r]
        self.basis[r] = j

    def optimise(self, cost: np.ndarray, max_iter: int) -> None:
        m, N = self.T.shape
        movable = self.ub > self.lb
        for _ in range(max_iter):
            is_basic = np.zeros(N, dtype=bool)
            is_basic[self.basis] = True
            d = cost - cost[self.basis] @ self.T
            improving = (~is_basic) & movable & (
                ((~self.at_upper) & (d > COST_TOL)) | (self.at_upper & (d < -COST_TOL))
            )
            cand = np.flatnonzero(improving)
            if cand.size == 0:
                return
            j = int(cand[0])
            sigma = -1.0 if self.at_upper[j] else 1.0

            xb = self.values()[self.basis]
            delta = -sigma * self.T[:, j]
            best_t = self.ub[j] - self.lb[j]
            leave = -1
            leave_to_upper = False
            for i in range(m):
                bi = self.basis[i]
                if delta[i] < -PIVOT_TOL:
                    t = (xb[i] - self.lb[bi]) / -delta[i]
                    to_upper = False
                elif delta[i] > PIVOT_TOL and np.isfinite(self.ub[bi]):
                    t = (self.ub[bi] - xb[i]) / delta[i]
                    to_upper = True
                else:
                    continue
                t = max(t, 0.0)
                if t < best_t - 1e-12 or (
                    leave >= 0 and abs(t - best_t) <= 1e-12 and bi < self.basis[leave]
                ):
                    best_t, leave, leave_to_upper = t, i, to_upper
            if not np.isfinite(best_t):
                raise RuntimeError("LP is unbounded; bounded variables should prevent this")
            if leave < 0:
                # Entering variable reaches its opposite bound first.
                self.at_upper[j] = not self.at_upper[j]
                continue
            out = self.basis[leave]
            self.pivot(leave, j)
            self.at_upper[j] = False
            self.at_upper[out] = leave_to_upper
        raise RuntimeError("simplex iteration limit reached")


def lp_solve(lp: LinearProgram, max_iter: Optional[int] = None) -> LPResult:
    n = lp.objective.shape[0]
    m = lp.A.shape[0]
    span = lp.upper - lp.lower
    r = lp.b - lp.A @ lp.lower

    if m == 0:
        x = np.where(lp.objective > 0, lp.upper, lp.lower)
        return LPResult("optimal", float(lp.objective @ x), x)

    neg = np.flatnonzero(r < 0)
    n_art = neg.size
    N = n + m + n_art
    T = np.zeros((m, N))
    T[:, :n] = lp.A
    T[:, n : n + m] = np.eye(m)
    rhs = r.copy()
    basis = list(range(n, n + m))
    for a, i in enumerate(neg):
        T[i] *= -1.0
        rhs[i] *= -1.0
        T[i, n + m + a] = 1.0
        basis[i] = n + m + a

    lb = np.zeros(N)
    ub = np.concatenate([span, np.full(m, np.inf), np.full(n_art, np.inf)])
    tab = _Tableau(T, rhs, np.array(basis), lb, ub)
    limit = max_iter or 50 * (m + N) + 1000

    if n_art:
        cost1 = np.zeros(N)
        cost1[n + m :] = -1.0
        tab.optimise(cost1, limit)
        infeas = tab.values()[n + m :].sum()
        if infeas > 1e-8 * max(1.0, np.abs(r).max()):
            return LPResult("infeasible", -np.inf, None)
        tab.ub[n + m :] = 0.0
        tab.at_upper[n + m :] = False

    cost2 = np.zeros(N)
    cost2[:n] = lp.objective
    tab.optimise(cost2, limit)
    y = np.clip(tab.values()[:n], 0.0, span)
    x = lp.lower + y
    return LPResult("optimal", float(lp.objective @ x), x)


def maximize(objective, lower, upper, A=None, b=None) -> LPResult:
    return lp_solve(LinearProgram.build(objective, lower, upper, A, b))


def box_bounds_of_affine(W, bias, lower, upper, A=None, b=None):
    """Tight per-row bounds of ``W z + bias`` over ``{l <= z <= u, A z <= b}``.

    Two programs per row.  Raises ``ValueError`` for an empty feasible set.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    lo = np.empty(W.shape[0])
    hi = np.empty(W.shape[0])
    for i, row in enumerate(W):
        top = maximize(row, lower, upper, A, b)
        if not top.feasible:
            raise ValueError("constraint set is empty")
        bottom = maximize(-row, lower, upper, A, b)
        hi[i] = top.value
        lo[i] = -bottom.value
    return lo + bias, hi + bias
