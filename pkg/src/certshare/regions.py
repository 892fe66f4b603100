"""Input-region builders: l-inf balls, masked balls, patches and rotations.

Image vectors are flattened channels-last, i.e. index ``(r * w + c) * ch + k``
for a ``(ch, h, w)`` image shape.  Patch and mask coordinates address pixels
and always span every channel.  Patch positions ``(i, j)`` are 1-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .relax import Box


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Coordinate indices ``mu`` that a masked region may perturb."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    @classmethod
    def from_pixels(cls, pixels: Sequence[tuple], shape) -> "PixelMask":
        """Mask covering every channel of the given ``(row, col)`` pixels (0-based)."""
        ch, h, w = _image_shape(shape)
        idx = []
        for r, c in pixels:
            if not (0 <= r < h and 0 <= c < w):
                raise IndexError(f"pixel ({r}, {c}) outside a {h}x{w} image")
            base = (r * w + c) * ch
            idx.extend(range(base, base + ch))
        return cls(np.array(idx, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class RegionSpec:
    region: Box
    kind: str
    anchor: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.region.dim


def _image_shape(shape) -> tuple:
    if len(shape) == 2:
        return (1, int(shape[0]), int(shape[1]))
    if len(shape) != 3:
        raise ValueError(f"image shape must be (c, h, w), got {tuple(shape)}")
    return tuple(int(s) for s in shape)


def _vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x.setflags(write=False)
    return x


def _box(lower, upper, clip: bool) -> Box:
    if clip:
        lower = np.clip(lower, 0.0, 1.0)
        upper = np.clip(upper, 0.0, 1.0)
    return Box.from_bounds(lower, upper)


def linf_region(x, eps: float, clip: bool = False) -> RegionSpec:
    if eps < 0:
        raise ValueError("epsilon must be nonnegative")
    x = _vector(x)
    return RegionSpec(_box(x - eps, x + eps, clip), "linf", x, {"epsilon": float(eps)})


def masked_linf_region(x, mask: PixelMask, eps: float, clip: bool = False) -> RegionSpec:
    """``eps``-ball on the masked coordinates; every other coordinate is pinned to ``x``."""
    if eps < 0:
        raise ValueError("epsilon must be nonnegative")
    x = _vector(x)
    if mask.indices.size and (mask.indices[0] < 0 or mask.indices[-1] >= x.size):
        raise IndexError("mask index outside the input")
    lo = x.copy()
    hi = x.copy()
    lo[mask.indices] -= eps
    hi[mask.indices] += eps
    if clip:
        # Pinned coordinates stay at x even when x itself lies outside [0, 1].
        lo[mask.indices] = np.clip(lo[mask.indices], 0.0, 1.0)
        hi[mask.indices] = np.clip(hi[mask.indices], 0.0, 1.0)
    return RegionSpec(Box.from_bounds(np.minimum(lo, hi), np.maximum(lo, hi)), "masked_linf", x,
                      {"epsilon": float(eps), "mask_size": len(mask)})


def patch_region(x, shape, p: int, i: int, j: int) -> RegionSpec:
    """Pixels in the ``p x p`` window with 1-based top-left ``(i, j)`` range over ``[0, 1]``."""
    ch, h, w = _image_shape(shape)
    x = _vector(x)
    if x.size != ch * h * w:
        raise ValueError(f"input of length {x.size} does not match shape {(ch, h, w)}")
    if p < 1 or not (1 <= i <= h - p + 1 and 1 <= j <= w - p + 1):
        raise IndexError(f"patch {p}x{p} at ({i}, {j}) does not fit a {h}x{w} image")
    lo = x.copy().reshape(h, w, ch)
    hi = x.copy().reshape(h, w, ch)
    lo[i - 1 : i - 1 + p, j - 1 : j - 1 + p, :] = 0.0
    hi[i - 1 : i - 1 + p, j - 1 : j - 1 + p, :] = 1.0
    return RegionSpec(Box.from_bounds(lo.reshape(-1), hi.reshape(-1)), "patch", x,
                      {"i": i, "j": j, "p": p})


def enumerate_patches(x, shape, p: int) -> list:
    """All patch regions in row-major ``(i, j)`` order."""
    _, h, w = _image_shape(shape)
    if p > min(h, w):
        raise ValueError(f"patch size {p} exceeds image {h}x{w}")
    return [patch_region(x, shape, p, i, j) for i in range(1, h - p + 2) for j in range(1, w - p + 2)]


def template_masks(kind: str, shape, center: int = 6) -> list:
    """Partition of the pixels into template groups: ``linf``, ``center_border`` or ``grid2x2``."""
    _, h, w = _image_shape(shape)
    pixels = [(r, c) for r in range(h) for c in range(w)]
    kind = kind.replace("-", "_")
    if kind == "linf":
        groups = [pixels]
    elif kind == "center_border":
        if center > min(h, w) or center < 0:
            raise ValueError(f"center side {center} does not fit a {h}x{w} image")
        r0, c0 = (h - center) // 2, (w - center) // 2
        inside = [(r, c) for r, c in pixels if r0 <= r < r0 + center and c0 <= c < c0 + center]
        outside = [(r, c) for r, c in pixels if not (r0 <= r < r0 + center and c0 <= c < c0 + center)]
        groups = [inside, outside]
    elif kind in ("grid2x2", "grid"):
        hr, hc = h // 2, w // 2
        groups = [
            [(r, c) for r, c in pixels if (r < hr) == top and (c < hc) == left]
            for top in (True, False)
            for left in (True, False)
        ]
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    return [PixelMask.from_pixels(g, shape) for g in groups if g]


# ---------------------------------------------------------------- rotation


def _source_coords(h: int, w: int, gamma_deg: float):
    """Inverse-rotation source coordinates of every target pixel (counterclockwise)."""
    g = math.radians(gamma_deg)
    rc, cc = (h - 1) / 2.0, (w - 1) / 2.0
    dr, dc = np.meshgrid(np.arange(h) - rc, np.arange(w) - cc, indexing="ij")
    rs = rc + math.sin(g) * dc + math.cos(g) * dr
    cs = cc + math.cos(g) * dc - math.sin(g) * dr
    return rs, cs


def _bilinear(img: np.ndarray, rs, cs) -> np.ndarray:
    """Bilinear samples of a ``(h, w, ch)`` image with zero padding; result ``rs.shape + (ch,)``."""
    h, w, _ = img.shape
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)))
    rs = np.asarray(rs, dtype=np.float64)
    cs = np.asarray(cs, dtype=np.float64)
    # Anything beyond one pixel outside the grid reads only padding.
    rs = np.clip(rs, -1.0, h)
    cs = np.clip(cs, -1.0, w)
    r0 = np.clip(np.floor(rs), -1, h - 1).astype(np.int64)
    c0 = np.clip(np.floor(cs), -1, w - 1).astype(np.int64)
    fr = (rs - r0)[..., None]
    fc = (cs - c0)[..., None]
    r0 += 1
    c0 += 1
    return (
        (1 - fr) * (1 - fc) * padded[r0, c0]
        + (1 - fr) * fc * padded[r0, c0 + 1]
        + fr * (1 - fc) * padded[r0 + 1, c0]
        + fr * fc * padded[r0 + 1, c0 + 1]
    )


def rotate_image(x, shape, gamma_deg: float) -> np.ndarray:
    """Concrete rotation by ``gamma_deg`` degrees about the image center."""
    ch, h, w = _image_shape(shape)
    img = np.asarray(x, dtype=np.float64).reshape(h, w, ch)
    rs, cs = _source_coords(h, w, gamma_deg)
    return _bilinear(img, rs, cs).reshape(-1)


def transform_image(x, shape, gamma_deg: float, contrast: float = 1.0, brightness: float = 0.0,
                    clip: bool = True) -> np.ndarray:
    """Rotation followed by ``c * z + b`` (optionally clipped to ``[0, 1]``)."""
    z = contrast * rotate_image(x, shape, gamma_deg) + brightness
    return np.clip(z, 0.0, 1.0) if clip else z


def _sin_range(a: np.ndarray, b: np.ndarray):
    """Elementwise exact range of ``sin`` over ``[a, b]`` (radians)."""
    lo = np.minimum(np.sin(a), np.sin(b))
    hi = np.maximum(np.sin(a), np.sin(b))
    # Maxima at pi/2 + 2 pi n, minima at -pi/2 + 2 pi n.
    has_max = np.floor((b - math.pi / 2) / (2 * math.pi)) >= np.ceil((a - math.pi / 2) / (2 * math.pi))
    has_min = np.floor((b + math.pi / 2) / (2 * math.pi)) >= np.ceil((a + math.pi / 2) / (2 * math.pi))
    return np.where(has_min, -1.0, lo), np.where(has_max, 1.0, hi)


def _source_box(h: int, w: int, g_lo: float, g_hi: float):
    """Per-pixel bounds of the inverse-rotation source coordinates over ``[g_lo, g_hi]`` degrees.

    ``rs - rc = rho * sin(g + phi)`` and ``cs - cc = rho * cos(g + phi)`` with
    ``rho, phi`` the polar form of ``(dc, dr)``, so each range is exact.
    """
    rc, cc = (h - 1) / 2.0, (w - 1) / 2.0
    dr, dc = np.meshgrid(np.arange(h) - rc, np.arange(w) - cc, indexing="ij")
    rho = np.hypot(dr, dc)
    phi = np.arctan2(dr, dc)
    a = math.radians(g_lo) + phi
    b = math.radians(g_hi) + phi
    s_lo, s_hi = _sin_range(a, b)
    c_lo, c_hi = _sin_range(a + math.pi / 2, b + math.pi / 2)
    slack = 1e-9
    return (rc + rho * s_lo - slack, rc + rho * s_hi + slack,
            cc + rho * c_lo - slack, cc + rho * c_hi + slack)


def _cuts(lo: float, hi: float) -> np.ndarray:
    inner = np.arange(math.floor(lo) + 1, math.ceil(hi))
    return np.unique(np.concatenate([[lo, hi], inner.astype(np.float64)]))


def _rotation_bounds(img: np.ndarray, g_lo: float, g_hi: float):
    """Per-pixel value range of the bilinear rotation over every angle in the interval.

    A bilinear cell interpolant takes its extrema over a rectangle at the
    rectangle's corners, so evaluating on the grid lines cutting the source
    box (plus its corners) bounds every cell it touches.
    """
    h, w, ch = img.shape
    r_lo, r_hi, c_lo, c_hi = _source_box(h, w, g_lo, g_hi)
    lower = np.empty((h, w, ch))
    upper = np.empty((h, w, ch))
    for r in range(h):
        for c in range(w):
            rr = _cuts(r_lo[r, c], r_hi[r, c])
            cc = _cuts(c_lo[r, c], c_hi[r, c])
            gr, gc = np.meshgrid(rr, cc, indexing="ij")
            vals = _bilinear(img, gr, gc).reshape(-1, ch)
            lower[r, c] = vals.min(axis=0)
            upper[r, c] = vals.max(axis=0)
    return lower, upper


def geometric_region(
    x,
    shape,
    gamma: tuple,
    contrast: tuple = (1.0, 1.0),
    brightness: tuple = (0.0, 0.0),
    angle_samples: int = 2,
    clip: bool = True,
) -> RegionSpec:
    """Box containing every rotation (degrees), contrast and brightness change of ``x``.

    The angle interval is cut at ``angle_samples`` evenly spaced angles and the
    per-piece bounds are joined; more samples give a tighter box.
    """
    if angle_samples < 2:
        raise ValueError("angle_samples must be at least 2")
    for name, (lo, hi) in (("gamma", gamma), ("contrast", contrast), ("brightness", brightness)):
        if lo > hi:
            raise ValueError(f"{name} interval [{lo}, {hi}] is not ordered")
    if contrast[0] < 0:
        raise ValueError("contrast factors must be nonnegative")
    ch, h, w = _image_shape(shape)
    x = _vector(x)
    img = x.reshape(h, w, ch)

    if gamma[0] == gamma[1]:
        rot = rotate_image(x, shape, gamma[0]).reshape(h, w, ch)
        z_lo, z_hi = rot, rot.copy()
    else:
        ticks = np.linspace(gamma[0], gamma[1], angle_samples)
        z_lo = np.full((h, w, ch), np.inf)
        z_hi = np.full((h, w, ch), -np.inf)
        for a, b in zip(ticks[:-1], ticks[1:]):
            lo, hi = _rotation_bounds(img, a, b)
            z_lo = np.minimum(z_lo, lo)
            z_hi = np.maximum(z_hi, hi)

    # c * z + b with interval arithmetic (c >= 0).
    cands = np.stack([contrast[0] * z_lo, contrast[0] * z_hi, contrast[1] * z_lo, contrast[1] * z_hi])
    lo = cands.min(axis=0).reshape(-1) + brightness[0]
    hi = cands.max(axis=0).reshape(-1) + brightness[1]
    params = {"gamma": tuple(map(float, gamma)), "contrast": tuple(map(float, contrast)),
              "brightness": tuple(map(float, brightness))}
    return RegionSpec(_box(lo, hi, clip), "geometric", x, params)


def split_interval(interval: tuple, r: int) -> list:
    if r < 1:
        raise ValueError("number of splits must be at least 1")
    lo, hi = float(interval[0]), float(interval[1])
    edges = np.linspace(lo, hi, r + 1)
    edges[0], edges[-1] = lo, hi
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def geometric_template_anchors(x, shape, gamma: tuple, m: int) -> list:
    """``(rotated image, angle)`` at the center of each of ``m`` equal chunks of ``gamma``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    out = []
    for lo, hi in split_interval(gamma, m):
        angle = (lo + hi) / 2.0
        out.append((np.clip(rotate_image(x, shape, angle), 0.0, 1.0), angle))
    return out
