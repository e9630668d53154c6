"""Dyadic scales, delta-discretised point sets and their generators.

Everything here works at a fixed dyadic resolution ``delta = 2**-m``.  Point
coordinates are doubles, but the generators only emit multiples of ``delta``
(or of a grid-rounded gap), so grid-cell membership is never ambiguous.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

MAX_M = 20


@dataclass(frozen=True)
class Scale:
    """Resolution ``delta = 2**-m``; ``log2(1/delta) == m`` exactly."""

    m: int

    def __post_init__(self):
        if isinstance(self.m, bool) or not isinstance(self.m, (int, np.integer)):
            raise TypeError(f"m must be an integer, got {self.m!r}")
        if not 1 <= self.m <= MAX_M:
            raise ValueError(f"m must lie in [1, {MAX_M}], got {self.m}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def delta(self) -> float:
        return math.ldexp(1.0, -self.m)

    def power(self, s: float) -> float:
        """``delta**s``."""
        return 2.0 ** (-self.m * s)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointSet1D:
    points: np.ndarray
    scale: Scale

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1)
        if pts.size and (pts[0] < 0.0 or pts[-1] > 1.0):
            raise ValueError("points must lie in [0, 1]")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("points must be sorted strictly increasing")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, PointSet1D)
            and self.scale == other.scale
            and np.array_equal(self.points, other.points)
        )

    @classmethod
    def from_unsorted(cls, values, scale: Scale) -> "PointSet1D":
        return cls(np.unique(np.asarray(values, dtype=float)), scale)


@dataclass(frozen=True, eq=False)
class PointSet2D:
    points: np.ndarray
    scale: Scale
    box: float = 2.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if pts.size and (pts.min() < 0.0 or pts.max() > self.box):
            raise ValueError(f"points must lie in [0, {self.box}]^2")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, PointSet2D)
            and self.scale == other.scale
            and np.array_equal(self.points, other.points)
        )


PointSet = Union[PointSet1D, PointSet2D]


@dataclass(frozen=True)
class NonConReport:
    """Largest measured ratio ``|X ∩ B(x, r)| / (r/delta)**s``.

    Centers range over ``X`` and radii over ``delta * 2**k``.  For arbitrary
    centers and radii the true constant is at most ``general_factor`` times
    ``constant``.
    """

    s: float
    constant: float
    witness: Optional[Tuple[Tuple[float, ...], float, int]] = None
    delta_s_separated: Optional[bool] = None

    @property
    def general_factor(self) -> float:
        return 2.0 * 2.0**self.s


def _coords(X) -> np.ndarray:
    if isinstance(X, (PointSet1D, PointSet2D)):
        return X.points
    return np.asarray(X, dtype=float)


def _scale_of(X, scale: Optional[Scale]) -> Scale:
    if scale is not None:
        return scale
    if isinstance(X, (PointSet1D, PointSet2D)):
        return X.scale
    raise TypeError("a Scale is required for raw coordinate arrays")


def grid_cells(coords: np.ndarray, delta: float) -> np.ndarray:
    """Half-open delta-cell index of every coordinate."""
    return np.floor(np.asarray(coords, dtype=float) / delta).astype(np.int64)


def covering_number(X, scale: Optional[Scale] = None) -> int:
    """Number of half-open delta-grid cells (intervals or squares) meeting X."""
    scale = _scale_of(X, scale)
    pts = _coords(X)
    if pts.size == 0:
        return 0
    cells = grid_cells(pts, scale.delta)
    if cells.ndim == 1:
        return int(np.unique(cells).size)
    return int(np.unique(cells, axis=0).shape[0])


def is_delta_separated(X, scale: Optional[Scale] = None) -> bool:
    """True iff all pairwise distances are >= delta (equality allowed)."""
    scale = _scale_of(X, scale)
    pts = _coords(X)
    delta = scale.delta
    if pts.shape[0] < 2:
        return True
    if pts.ndim == 1:
        return bool(np.min(np.diff(np.sort(pts))) >= delta)
    # kd-tree pairs at radius delta are a superset; decide on exact squares
    pairs = cKDTree(pts).query_pairs(delta * (1 + 1e-9), output_type="ndarray")
    if pairs.size == 0:
        return True
    d = pts[pairs[:, 0]] - pts[pairs[:, 1]]
    return bool(np.all(d[:, 0] ** 2 + d[:, 1] ** 2 >= delta * delta))


def _ball_counts(pts: np.ndarray, tree, r: float) -> np.ndarray:
    """Closed-ball counts ``|X ∩ B(x, r)|`` for every x in X."""
    if pts.ndim == 1:
        lo = np.searchsorted(pts, pts - r, side="left")
        hi = np.searchsorted(pts, pts + r, side="right")
        return hi - lo
    lo = tree.query_ball_point(pts, r * (1 - 1e-12), return_length=True)
    hi = tree.query_ball_point(pts, r * (1 + 1e-12), return_length=True)
    out = np.asarray(lo, dtype=np.int64)
    for i in np.nonzero(np.asarray(hi) != out)[0]:
        d = pts - pts[i]
        out[i] = int(np.count_nonzero(d[:, 0] ** 2 + d[:, 1] ** 2 <= r * r))
    return out


def dyadic_radii(scale: Scale, diameter: float = 1.0) -> np.ndarray:
    """``delta * 2**k`` from ``k = 0`` up to max(m, first k covering the diameter)."""
    top = scale.m
    if diameter > 1.0:
        top = max(top, math.ceil(math.log2(diameter / scale.delta)))
    return np.ldexp(1.0, np.arange(0, top + 1) - scale.m)


def nonconcentration(X, scale: Optional[Scale] = None, s: float = 1.0) -> NonConReport:
    scale = _scale_of(X, scale)
    pts = _coords(X)
    one_d = pts.ndim == 1
    s_max = 1.0 if one_d else 2.0
    if not 0 < s <= s_max:
        raise ValueError(f"s must lie in (0, {s_max}], got {s}")
    if pts.shape[0] == 0:
        return NonConReport(s=s, constant=0.0)
    if one_d:
        pts = np.sort(pts)
        tree, diameter = None, float(pts[-1] - pts[0])
    else:
        tree = cKDTree(pts)
        diameter = float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))
    best, witness = -1.0, None
    for r in dyadic_radii(scale, diameter):
        counts = _ball_counts(pts, tree, float(r))
        ratios = counts / (r / scale.delta) ** s
        i = int(np.argmax(ratios))
        if ratios[i] > best:
            best = float(ratios[i])
            center = (float(pts[i]),) if one_d else (float(pts[i, 0]), float(pts[i, 1]))
            witness = (center, float(r), int(counts[i]))
    return NonConReport(s=s, constant=best, witness=witness)


def extract_ds_subset(X: PointSet1D, scale: Optional[Scale] = None, s: float = 0.5) -> PointSet1D:
    """Greedy multi-scale thinning of X to a (delta, s)-set.

    Points are scanned left to right and a point is kept only if, at every
    dyadic radius r, the kept points in ``[x - r, x]`` (x included) number at
    most ``ceil((r/delta)**s)``.  Every closed interval of length r then holds
    at most that many kept points, so each r-ball around a kept point holds
    at most ``2*ceil((r/delta)**s) - 1 <= 3 (r/delta)**s`` of them.  At
    ``r = delta`` the cap is 1, which also makes the output delta-separated.
    """
    scale = _scale_of(X, scale)
    if not 0 < s <= 1:
        raise ValueError(f"s must lie in (0, 1], got {s}")
    pts = np.sort(_coords(X))
    if pts.size == 0:
        raise ValueError("X must be nonempty")
    radii = dyadic_radii(scale)
    caps = [math.ceil((r / scale.delta) ** s - 1e-12) for r in radii]
    kept: list = []
    for x in pts:
        x = float(x)
        ok = True
        for r, cap in zip(radii, caps):
            inside = len(kept) - bisect.bisect_left(kept, x - r)
            if inside + 1 > cap:
                ok = False
                break
        if ok:
            kept.append(x)
    return PointSet1D(np.array(kept), scale)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def gen_ap_set(scale: Scale, s: float) -> PointSet1D:
    """Arithmetic progression with gap ``delta**s`` rounded up to the delta grid."""
    if not 0 < s <= 1:
        raise ValueError(f"s must lie in (0, 1], got {s}")
    step = max(1, math.ceil(2.0 ** (scale.m * (1 - s)) - 1e-9))
    ks = np.arange(0, (1 << scale.m) // step + 1, dtype=np.int64) * step
    return PointSet1D(np.ldexp(ks.astype(float), -scale.m), scale)


def _cantor_branching(s: float, max_q: int = 8):
    """(b, q) with log2(b)/q == s, smallest q first; or None and the nearest."""
    best = None
    for q in range(1, max_q + 1):
        for b in range(1, (1 << q) + 1):
            val = math.log2(b) / q
            if abs(val - s) < 1e-12:
                return (b, q), None
            if best is None or abs(val - s) < abs(best[0] - s):
                best = (val, b, q)
    return None, best


def gen_cantor_set(scale: Scale, s: float, branching: Optional[Tuple[int, int]] = None) -> PointSet1D:
    """Self-similar Cantor set keeping b of B = 2**q subintervals per level.

    Pass ``branching=(b, B)`` to pin the construction, otherwise the smallest
    B realising ``s = log2(b)/log2(B)`` is used.  Points are the left
    endpoints of the surviving cells after ``m // q`` levels.
    """
    if branching is not None:
        b, B = branching
        q = int(round(math.log2(B)))
        if 1 << q != B or not 1 <= b <= B:
            raise ValueError(f"invalid branching {branching}")
        if abs(math.log2(b) / q - s) > 1e-12:
            raise ValueError(f"branching {branching} realises s={math.log2(b) / q}, not {s}")
    else:
        found, nearest = _cantor_branching(s)
        if found is None:
            val, nb, nq = nearest
            raise ValueError(
                f"s={s} is not realisable as log2(b)/log2(B) with B <= 256; "
                f"nearest realisable s is {val} (b={nb}, B={1 << nq})"
            )
        b, q = found
    B = 1 << q
    levels = scale.m // q
    if levels == 0:
        raise ValueError(f"m={scale.m} is too small for B={B}")
    keep = [0] if b == 1 else [round(i * (B - 1) / (b - 1)) for i in range(b)]
    idx = np.zeros(1, dtype=np.int64)
    for _ in range(levels):
        idx = (idx[:, None] * B + np.asarray(keep, dtype=np.int64)[None, :]).ravel()
    idx.sort()
    return PointSet1D(np.ldexp(idx.astype(float), -q * levels), scale)


def gen_random_ds_set(scale: Scale, s: float, seed: int) -> PointSet1D:
    """``ceil(delta**-s)`` uniformly chosen grid cells, then thinned."""
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    n_cells = 1 << scale.m
    k = min(n_cells, math.ceil(2.0 ** (scale.m * s) - 1e-9))
    cells = np.sort(rng.choice(n_cells, size=k, replace=False))
    return extract_ds_subset(PointSet1D(np.ldexp(cells.astype(float), -scale.m), scale), scale, s)


def gen_figure3_set(scale: Scale) -> PointSet2D:
    """``delta**-1/2`` columns of ``delta**-1/2`` points at vertical spacing delta.

    Columns sit at x-spacing ``delta**1/2`` and climb as a staircase: column i
    occupies heights ``[i, i+1) * delta**1/2``.  The set is a (delta, 1)-set
    whose projection to the x-axis is only ``delta**-1/2`` cells wide.
    """
    if scale.m % 2:
        raise ValueError(f"staircase set needs even m, got {scale.m}")
    k = 1 << (scale.m // 2)
    col, row = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    x = np.ldexp((col * k).astype(float), -scale.m)
    y = np.ldexp((col * k + row).astype(float), -scale.m)
    return PointSet2D(np.column_stack([x.ravel(), y.ravel()]), scale)


def product_set(A: PointSet1D, A2: PointSet1D) -> PointSet2D:
    if A.scale != A2.scale:
        raise ValueError("product_set needs both factors at the same scale")
    xx, yy = np.meshgrid(A.points, A2.points, indexing="ij")
    return PointSet2D(np.column_stack([xx.ravel(), yy.ravel()]), A.scale)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def dumps_points(X: PointSet) -> str:
    dim = 1 if isinstance(X, PointSet1D) else 2
    lines = [f"# scale={X.scale.m} dim={dim}"]
    if dim == 1:
        lines += [repr(float(v)) for v in X.points]
    else:
        lines += [f"{float(a)!r} {float(b)!r}" for a, b in X.points]
    return "\n".join(lines) + "\n"


def loads_points(text: str) -> PointSet:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing '# scale=m dim=d' header")
    header = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split())
    scale = Scale(int(header["scale"]))
    dim = int(header["dim"])
    rows = [[float(t) for t in ln.split()] for ln in lines[1:]]
    if dim == 1:
        return PointSet1D(np.array([r[0] for r in rows]), scale)
    if dim == 2:
        return PointSet2D(np.array(rows).reshape(-1, 2), scale)
    raise ValueError(f"unsupported dim {dim}")


def save_points(X: PointSet, path) -> None:
    Path(path).write_text(dumps_points(X))


def load_points(path) -> PointSet:
    return loads_points(Path(path).read_text())
