"""Box, Zonotope and Star relaxations with their abstract transformers.

All shapes are immutable: constructors copy their inputs into read-only
float64 arrays, and every operation returns a new object.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class Box:
    """Axis-aligned interval vector ``{center + diag(width) e | e in [-1, 1]^d}``."""

    __slots__ = ("center", "width")

    def __init__(self, center, width):
        center = _frozen(center, 1)
        width = _frozen(width, 1)
        if center.shape != width.shape:
            raise ValueError(f"center {center.shape} and width {width.shape} differ")
        if np.any(width < 0) or not np.all(np.isfinite(width)):
            raise ValueError("box widths must be finite and nonnegative")
        self.center = center
        self.width = width

    @classmethod
    def from_bounds(cls, lower, upper) -> "Box":
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        center = (lower + upper) / 2.0
        width = np.maximum((upper - lower) / 2.0, np.maximum(upper - center, center - lower))
        # Round outwards so that center -/+ width still covers both bounds.
        for _ in range(4):
            short = (center - width > lower) | (center + width < upper)
            if not short.any():
                break
            width = np.where(short, np.nextafter(width, np.inf), width)
        return cls(center, width)

    @classmethod
    def point(cls, x) -> "Box":
        x = np.asarray(x, dtype=np.float64)
        return cls(x, np.zeros_like(x))

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.width

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.width

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def __repr__(self) -> str:
        pairs = ", ".join(f"[{l:g},{u:g}]" for l, u in zip(self.lower, self.upper))
        return f"Box({pairs})"


class Zonotope:
    """Affine image of the unit cube: ``{center + generators @ e | e in [-1, 1]^p}``."""

    __slots__ = ("center", "generators")

    def __init__(self, center, generators=None):
        center = _frozen(center, 1)
        if generators is None:
            generators = np.zeros((center.shape[0], 0))
        generators = _frozen(generators, 2)
        if generators.shape[0] != center.shape[0]:
            raise ValueError(
                f"generator rows {generators.shape[0]} != dimension {center.shape[0]}"
            )
        self.center = center
        self.generators = generators

    @classmethod
    def from_box(cls, box: Box) -> "Zonotope":
        # Zero-width coordinates get no noise symbol.
        keep = np.flatnonzero(box.width > 0)
        gens = np.zeros((box.dim, keep.size))
        gens[keep, np.arange(keep.size)] = box.width[keep]
        return cls(box.center, gens)

    @classmethod
    def point(cls, x) -> "Zonotope":
        return cls(x)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        radius = np.abs(self.generators).sum(axis=1)
        return self.center - radius, self.center + radius

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` points from the zonotope (noise symbols uniform, corners included)."""
        e = rng.uniform(-1.0, 1.0, size=(n, self.num_generators))
        # Push a share of samples to the vertices, where violations would show first.
        corners = n // 4
        e[:corners] = np.sign(e[:corners])
        return self.center + e @ self.generators.T

    def __repr__(self) -> str:
        return f"Zonotope(dim={self.dim}, generators={self.num_generators})"


class Star:
    """Box intersected with half-spaces: ``{z in box | C z <= c}``."""

    __slots__ = ("box", "C", "c")

    def __init__(self, box: Box, C=None, c=None):
        if C is None:
            C = np.zeros((0, box.dim))
            c = np.zeros(0)
        C = _frozen(C, 2)
        c = _frozen(c, 1)
        if C.shape[1] != box.dim or C.shape[0] != c.shape[0]:
            raise ValueError(f"constraint shapes {C.shape}/{c.shape} do not fit box dim {box.dim}")
        self.box = box
        self.C = C
        self.c = c

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def num_constraints(self) -> int:
        return self.C.shape[0]

    def with_box(self, box: Box) -> "Star":
        return Star(box, self.C, self.c)

    def add_constraint(self, row, offset: float) -> "Star":
        C = np.vstack([self.C, np.asarray(row, dtype=np.float64)[None, :]])
        return Star(self.box, C, np.append(self.c, offset))

    def contains_point(self, z, tol: float = 0.0) -> bool:
        z = np.asarray(z, dtype=np.float64)
        in_box = np.all(self.box.lower - tol <= z) and np.all(z <= self.box.upper + tol)
        return bool(in_box and np.all(self.C @ z <= self.c + tol))

    def __repr__(self) -> str:
        return f"Star({self.box!r}, constraints={self.num_constraints})"


Shape = Union[Box, Zonotope, Star]


def _check_affine(dim: int, W: np.ndarray, bias: np.ndarray) -> None:
    if W.ndim != 2 or W.shape[1] != dim:
        raise ValueError(f"weight shape {W.shape} does not accept dimension {dim}")
    if bias.shape != (W.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {W.shape[0]} outputs")


def affine_box(b: Box, W, bias) -> Box:
    W = np.asarray(W, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_affine(b.dim, W, bias)
    return Box(W @ b.center + bias, np.abs(W) @ b.width)


def relu_box(b: Box) -> Box:
    return Box.from_bounds(np.maximum(b.lower, 0.0), np.maximum(b.upper, 0.0))


def affine_zono(z: Zonotope, W, bias) -> Zonotope:
    W = np.asarray(W, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_affine(z.dim, W, bias)
    return Zonotope(W @ z.center + bias, W @ z.generators)


def relu_zono(z: Zonotope, lower=None, upper=None) -> Zonotope:
    """DeepZ ReLU transformer.

    ``lower``/``upper`` may supply pre-activation bounds tighter than the
    zonotope's own (e.g. from an LP over a star); they must be sound for
    every reachable point.  Crossing neurons get slope ``u/(u-l)``, shift
    ``-l*slope/2`` and one fresh noise symbol each.
    """
    zl, zu = z.bounds()
    l = zl if lower is None else np.maximum(zl, lower)
    u = zu if upper is None else np.minimum(zu, upper)

    center = z.center.copy()
    gens = z.generators.copy()
    dead = u <= 0
    crossing = (l < 0) & (u > 0)

    center[dead] = 0.0
    gens[dead] = 0.0

    idx = np.flatnonzero(crossing)
    if idx.size == 0:
        return Zonotope(center, gens)
    lam = u[idx] / (u[idx] - l[idx])
    mu = -lam * l[idx] / 2.0
    center[idx] = lam * center[idx] + mu
    gens[idx] *= lam[:, None]
    fresh = np.zeros((z.dim, idx.size))
    fresh[idx, np.arange(idx.size)] = mu
    return Zonotope(center, np.hstack([gens, fresh]))


def alpha_box(z: Zonotope) -> Box:
    """Tight bounding box of a zonotope."""
    return Box(z.center, np.abs(z.generators).sum(axis=1))


def _same_dim(a: int, b: int) -> None:
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


def box_contains_box(inner: Box, outer: Box, tol: float = 0.0) -> bool:
    _same_dim(inner.dim, outer.dim)
    return bool(
        np.all(outer.lower - tol <= inner.lower) and np.all(inner.upper <= outer.upper + tol)
    )


def zono_in_box(z: Zonotope, b: Box, tol: float = 0.0) -> bool:
    _same_dim(z.dim, b.dim)
    return box_contains_box(alpha_box(z), b, tol)


def zono_in_star(z: Zonotope, s: Star, tol: float = 0.0) -> bool:
    if not zono_in_box(z, s.box, tol):
        return False
    if s.num_constraints == 0:
        return True
    support = s.C @ z.center + np.abs(s.C @ z.generators).sum(axis=1)
    return bool(np.all(support <= s.c + tol))


def box_join(boxes: Sequence[Box]) -> Box:
    if len(boxes) == 0:
        raise ValueError("cannot join an empty list of boxes")
    dim = boxes[0].dim
    for b in boxes:
        _same_dim(b.dim, dim)
    lower = np.min([b.lower for b in boxes], axis=0)
    upper = np.max([b.upper for b in boxes], axis=0)
    return Box.from_bounds(lower, upper)


def scale_box(b: Box, factors) -> Box:
    """Scale widths about the center; ``factors`` is a scalar or per-dimension vector."""
    factors = np.broadcast_to(np.asarray(factors, dtype=np.float64), (b.dim,))
    if np.any(factors < 0):
        raise ValueError("scaling factors must be nonnegative")
    return Box(b.center, b.width * factors)


def as_zonotope(shape: Union[Box, Zonotope]) -> Zonotope:
    return Zonotope.from_box(shape) if isinstance(shape, Box) else shape


def as_box(shape: Shape) -> Box:
    if isinstance(shape, Box):
        return shape
    if isinstance(shape, Star):
        return shape.box
    return alpha_box(shape)


def contained_in(shape: Union[Box, Zonotope], template: Union[Box, Star], tol: float = 0.0) -> bool:
    """Containment of a propagated relaxation in a Box or Star template."""
    if isinstance(template, Star):
        return zono_in_star(as_zonotope(shape), template, tol)
    if isinstance(shape, Box):
        return box_contains_box(shape, template, tol)
    return zono_in_box(shape, template, tol)
