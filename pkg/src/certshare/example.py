"""The two-input running example: propagation table and golden values."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .backends import star_first_step
from .network import Network, check_postcondition, propagate_box
from .regions import linf_region
from .relax import Box, Star, box_contains_box, box_join, scale_box

EPSILON = 0.5
INPUTS = {
    "x1": (0.5, 0.5),
    "x2": (1.0, 0.0),
    "x3": (1.5, 0.5),
    "x4": (11 / 6, 5 / 6),
    "x5": (1.7, 0.5),
}
EXPANSION = (7 / 6, 1.0)


def _b(*pairs) -> tuple:
    return tuple(tuple(float(v) for v in p) for p in pairs)


# Row -> column -> intervals (or a flag).  Every value follows from box
# arithmetic on the fixture weights; ``T1'`` uses the recomputed values.
GOLDEN = {
    "x1": {"I": _b((0, 1), (0, 1)), "h1": _b((0, 2), (0, 2)), "h2": _b((0, 2), (0, 2)),
           "N": _b((2.5, 6.5), (-2, 2)), "verified": True},
    "x2": {"I": _b((0.5, 1.5), (-0.5, 0.5)), "h1": _b((1, 3), (0, 0.5)), "h2": _b((0, 1), (0, 0)),
           "N": _b((2.5, 4.5), (-1, 0)), "verified": True},
    "x3": {"I": _b((1, 2), (0, 1)), "h1": _b((1, 3), (0, 2)), "h2": _b((0, 1), (0, 1)),
           "N": _b((2.5, 4.5), (-1, 1)), "verified": True},
    "x4": {"I": _b((4 / 3, 7 / 3), (1 / 3, 4 / 3)), "h1": _b((1, 3), (0, 3)), "h2": _b((0, 1), (0, 2)),
           "N": _b((2.5, 4.5), (-1, 2)), "verified": True},
    "x5": {"I": _b((1.2, 2.2), (0, 1)), "h1": _b((1.2, 3.2), (0, 2)), "h2": _b((0, 0.8), (0, 0.8)),
           "N": _b((2.5, 4.1), (-0.8, 0.8)), "verified": True},
    "T1": {"h1": _b((0, 3), (0, 2)), "h2": _b((0, 2), (0, 2)), "N": _b((2.5, 6.5), (-2, 2)),
           "verified": True},
    "T2": {"h1": _b((0, 3), (0, 3)), "h2": _b((0, 2), (0, 3)), "N": _b((2.5, 6.5), (-2, 3)),
           "verified": False},
    "T2'": {"h1": _b((0, 3), (0, 3)), "h2": _b((0, 2), (0, 2)), "N": _b((2.5, 6.5), (-2, 2)),
            "verified": True},
    "T1'": {"h1": _b((-0.25, 3.25), (0, 2)), "h2": _b((0, 2.25), (0, 2.25)),
            "N": _b((2.5, 7.0), (-2.25, 2.25)), "verified": True, "contains h1(x5)": True},
}

STAR_ROW = ((-1.0, 1.0), 2.0)


def _pairs(b: Box) -> tuple:
    return tuple((float(lo), float(hi)) for lo, hi in zip(b.lower, b.upper))


def build_table(net: Network) -> dict:
    """Box propagation of the example inputs and templates, all at layer 1."""
    table: dict = {}
    h1 = {}
    for name, x in INPUTS.items():
        region = linf_region(x, EPSILON).region
        a = propagate_box(net, region, 0, 1)
        b = propagate_box(net, a, 1, 2)
        n = propagate_box(net, b, 2, None)
        h1[name] = a
        table[name] = {"I": _pairs(region), "h1": _pairs(a), "h2": _pairs(b), "N": _pairs(n),
                       "verified": check_postcondition(n, 0)}

    def template_row(t):
        if isinstance(t, Star):
            b = star_first_step(net, t, 1, "box")
            box = t.box
        else:
            b = propagate_box(net, t, 1, 2)
            box = t
        n = propagate_box(net, b, 2, None)
        return {"h1": _pairs(box), "h2": _pairs(b), "N": _pairs(n), "verified": check_postcondition(n, 0)}

    t1 = box_join([h1["x1"], h1["x2"]])
    t2 = box_join([h1["x1"], h1["x4"]])
    t2s = Star(t2, [STAR_ROW[0]], [STAR_ROW[1]])
    t1e = scale_box(t1, EXPANSION)
    table["T1"] = template_row(t1)
    table["T2"] = template_row(t2)
    table["T2'"] = template_row(t2s)
    table["T1'"] = template_row(t1e)
    table["T1'"]["contains h1(x5)"] = box_contains_box(h1["x5"], t1e)
    return table


def deviations(table: dict, golden: Optional[dict] = None, tol: float = 1e-12) -> list:
    """``(row, column, got, want)`` for every cell differing from ``golden``."""
    golden = GOLDEN if golden is None else golden
    out = []
    for row, cols in golden.items():
        for col, want in cols.items():
            got = table.get(row, {}).get(col)
            if isinstance(want, bool) or got is None:
                same = got == want
            else:
                same = np.allclose(np.array(got), np.array(want), rtol=0.0, atol=tol)
            if not same:
                out.append((row, col, got, want))
    return out


def format_intervals(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    return "(" + ", ".join(f"[{lo:g},{hi:g}]" for lo, hi in v) + ")"
