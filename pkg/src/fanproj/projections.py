"""Orthogonal projections, sumset entropies and direction sets."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np

from ._workers import ordered_map
from .sets import (
    NonConReport,
    PointSet1D,
    PointSet2D,
    Scale,
    covering_number,
    dyadic_radii,
    gen_ap_set,
    product_set,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, order=True)
class Direction:
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    @property
    def unit(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    @classmethod
    def from_vector(cls, v) -> "Direction":
        return cls(math.atan2(v[1], v[0]))


def slope_direction(t: float) -> Direction:
    """Direction of ``(1, t)``: projecting A x A onto it gives ``A + tA`` up to scaling."""
    return Direction(math.atan2(t, 1.0))


@dataclass(frozen=True)
class DirectionSet:
    directions: tuple
    scale: Scale
    declared_s: Optional[float] = None

    def __post_init__(self):
        dirs = sorted(d if isinstance(d, Direction) else Direction(d) for d in self.directions)
        for a, b in zip(dirs, dirs[1:]):
            if a.theta == b.theta:
                raise ValueError(f"duplicate direction theta={a.theta}")
        object.__setattr__(self, "directions", tuple(dirs))

    def __len__(self):
        return len(self.directions)

    def __iter__(self):
        return iter(self.directions)

    @property
    def angles(self) -> np.ndarray:
        return np.array([d.theta for d in self.directions])

    @classmethod
    def from_angles(cls, angles, scale: Scale, declared_s=None) -> "DirectionSet":
        return cls(tuple(Direction(a) for a in np.unique(np.mod(angles, TWO_PI))), scale, declared_s)

    @classmethod
    def from_slopes(cls, ts, scale: Scale, declared_s=None) -> "DirectionSet":
        return cls(tuple({slope_direction(t) for t in ts}), scale, declared_s)


def angle_grid(scale: Scale, s: float, start: float = 0.0, stop: float = math.pi / 2) -> DirectionSet:
    """Angles ``start + k * delta**s`` inside ``[start, stop]``."""
    gap = scale.power(s)
    k = np.arange(0, int(math.floor((stop - start) / gap + 1e-9)) + 1)
    return DirectionSet.from_angles(start + k * gap, scale, declared_s=s)


def figure3_bad_directions(scale: Scale) -> DirectionSet:
    """``delta**-1/2`` directions at spacing delta just above the x-axis.

    Projecting the staircase of columns onto any of them keeps every column
    inside O(1) delta-cells, so all of them have projections of size about
    ``delta**-1/2``; they are packed into one arc of length ``delta**1/2``.
    """
    if scale.m % 2:
        raise ValueError("staircase directions need even m")
    k = np.arange(1 << (scale.m // 2))
    return DirectionSet.from_angles(k * scale.delta, scale)


@dataclass(frozen=True)
class Projection:
    values: np.ndarray

    @property
    def sorted(self) -> np.ndarray:
        return np.sort(self.values)


def project(B, e) -> Projection:
    """``{e . x : x in B}`` as a multiset in input order."""
    pts = B.points if isinstance(B, PointSet2D) else np.asarray(B, dtype=float).reshape(-1, 2)
    u = e.unit if isinstance(e, Direction) else np.asarray(e, dtype=float)
    return Projection(pts @ u)


def sumset_entropy(A: PointSet1D, t: float, scale: Optional[Scale] = None) -> int:
    """Delta-covering number of ``A + tA``."""
    scale = scale or A.scale
    a = A.points
    sums = (a[:, None] + t * a[None, :]).ravel()
    return covering_number(sums, scale)


def sumset_entropy_via_projection(A: PointSet1D, t: float, scale: Optional[Scale] = None) -> int:
    """Same quantity through the projection of ``A x A`` onto ``(1, t)/|(1, t)|``."""
    scale = scale or A.scale
    norm = math.hypot(1.0, t)
    vals = project(product_set(A, A), slope_direction(t)).values
    return int(np.unique(np.floor(vals / (scale.delta / norm))).size)


@dataclass(frozen=True)
class SweepRow:
    t: float
    entropy: int
    threshold: float
    exceptional: bool


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    s: float
    C_E: float

    @property
    def exceptional(self) -> List[float]:
        return sorted(r.t for r in self.rows if r.exceptional)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "entropy", "threshold", "exceptional_flag"])
        for r in self.rows:
            w.writerow([repr(r.t), r.entropy, repr(r.threshold), int(r.exceptional)])
        return buf.getvalue()


def default_parameter_grid(scale: Scale, s: float) -> np.ndarray:
    return gen_ap_set(scale, s).points.copy()


def exceptional_parameters(
    A: PointSet1D,
    scale: Optional[Scale] = None,
    s: float = 0.5,
    C_E: float = 4.0,
    T: Optional[Iterable[float]] = None,
    workers: Optional[int] = None,
    chunk: int = 64,
) -> SweepResult:
    """Parameters t whose sumset ``A + tA`` has at most ``C_E * delta**-s`` cells."""
    scale = scale or A.scale
    if C_E < 1:
        raise ValueError(f"C_E must be >= 1, got {C_E}")
    ts = sorted(set(float(t) for t in (default_parameter_grid(scale, s) if T is None else T)))
    threshold = C_E * scale.power(-s)
    chunks = [ts[i : i + chunk] for i in range(0, len(ts), chunk)]

    def run(block):
        return [sumset_entropy(A, t, scale) for t in block]

    entropies = [e for block in ordered_map(run, chunks, workers) for e in block]
    rows = tuple(SweepRow(t, n, threshold, n <= threshold) for t, n in zip(ts, entropies))
    return SweepResult(rows=rows, s=s, C_E=C_E)


def _circular_gaps(angles: np.ndarray) -> np.ndarray:
    a = np.sort(angles)
    return np.diff(np.concatenate([a, [a[0] + TWO_PI]]))


def direction_nonconcentration(E: DirectionSet, scale: Optional[Scale] = None, s: float = 0.5) -> NonConReport:
    """Non-concentration of angles in arc length, radii ``delta <= r <= 1``."""
    scale = scale or E.scale
    if not 0 < s <= 1:
        raise ValueError(f"s must lie in (0, 1], got {s}")
    ang = np.sort(E.angles)
    if ang.size == 0:
        return NonConReport(s=s, constant=0.0)
    separated = True if ang.size == 1 else bool(_circular_gaps(ang).min() >= scale.power(s) * (1 - 1e-12))
    ext = np.concatenate([ang - TWO_PI, ang, ang + TWO_PI])
    best, witness = -1.0, None
    for r in dyadic_radii(scale):
        counts = np.searchsorted(ext, ang + r, side="right") - np.searchsorted(ext, ang - r, side="left")
        counts = np.minimum(counts, ang.size)
        ratios = counts / (r / scale.delta) ** s
        i = int(np.argmax(ratios))
        if ratios[i] > best:
            best = float(ratios[i])
            witness = ((float(ang[i]),), float(r), int(counts[i]))
    return NonConReport(s=s, constant=best, witness=witness, delta_s_separated=separated)
