"""Delta-tubes, tube energies and fan extraction.

For a direction ``e`` the plane is cut into half-open slabs
``{x : 2n delta <= e.x < 2(n+1) delta}`` of width ``2 delta`` perpendicular
to ``e``.  Energies are summed over ordered pairs and logarithms are base 2,
so ``log(1/delta) == m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ._workers import ordered_map
from .projections import Direction, DirectionSet
from .sets import PointSet2D, Scale

S_MAX = 2.0 - math.sqrt(2.0)


def _coords(B) -> np.ndarray:
    if isinstance(B, PointSet2D):
        return B.points
    return np.asarray(B, dtype=float).reshape(-1, 2)


def _unit(e) -> np.ndarray:
    return e.unit if isinstance(e, Direction) else np.asarray(e, dtype=float)


@dataclass(frozen=True)
class FanParams:
    """Exponents and the explicit constants standing in for every ``≲``.

    ``tau`` defaults to ``2(s - sigma)/(1 - s)``; ``c`` is the exponent
    constant of the sigma-good threshold.
    """

    s: float
    sigma: float
    tau: Optional[float] = None
    C_avg: float = 4.0
    c: float = 2.0
    C_E: float = 4.0
    c_fan: float = 1 / 16
    c_rich: float = 1 / 16
    C_near: float = 8.0
    C_heavy: float = 1.0
    K_mult: float = 1.0
    coverage_floor: float = 0.9
    c_card: float = 0.25

    def __post_init__(self):
        if not 0.5 <= self.s < S_MAX:
            raise ValueError(f"s must lie in [1/2, 2 - sqrt(2)), got {self.s}")
        if not 0 < self.sigma < self.s:
            raise ValueError(f"sigma must lie in (0, s), got {self.sigma}")
        if self.tau is None:
            object.__setattr__(self, "tau", 2 * (self.s - self.sigma) / (1 - self.s))
        if self.tau <= (self.s - self.sigma) / (1 - self.s):
            raise ValueError(f"tau must exceed (s - sigma)/(1 - s) = {(self.s - self.sigma) / (1 - self.s)}")

    @property
    def kappa(self) -> float:
        return max(self.tau, self.c * (self.s - self.sigma))

    def D(self, scale: Scale) -> float:
        return self.C_avg**1.5 * math.sqrt(scale.m) * scale.power((self.sigma - self.s) / 2)

    def energy_unit(self, scale: Scale) -> float:
        """``delta**(sigma + s - 2) * log(1/delta)``."""
        return scale.power(self.sigma + self.s - 2) * scale.m

    def tube_budget(self, scale: Scale) -> int:
        return math.ceil(self.C_E * scale.power(-self.s) - 1e-9)

    def fan_threshold(self, scale: Scale) -> float:
        return self.c_fan * scale.power(self.tau - 1)


# ---------------------------------------------------------------------------
# single tubes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tube:
    e: Direction
    index: int
    scale: Scale

    @property
    def width(self) -> float:
        return 2 * self.scale.delta

    @property
    def center_offset(self) -> float:
        return (2 * self.index + 1) * self.scale.delta

    def contains(self, x) -> np.ndarray:
        return tube_index(x, self.e, self.scale) == self.index


def tube_index(x, e, scale: Scale):
    """``floor(e.x / 2 delta)``; a point on a slab boundary goes to the upper slab."""
    proj = np.asarray(x, dtype=float) @ _unit(e)
    n = np.floor(proj / (2 * scale.delta)).astype(np.int64)
    return int(n) if n.ndim == 0 else n


@dataclass(frozen=True)
class TubeEnergy:
    tube: Tube
    value: float
    point_count: int


def _check_s(s):
    if not 0 < s < 1:
        raise ValueError(f"energy exponent needs 0 < s < 1, got {s}")


def _pair_powers(pts: np.ndarray, power: float) -> float:
    if pts.shape[0] < 2:
        return 0.0
    d = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)
    np.fill_diagonal(dist, np.inf)
    if np.any(dist == 0):
        raise ValueError("coincident points: the set is not delta-separated")
    return float(np.sum(dist**power))


def tube_energy(B, tube: Tube, s: float) -> TubeEnergy:
    """``sum over ordered x != y in B ∩ T of |x - y|**(s - 1)``."""
    _check_s(s)
    pts = _coords(B)
    inside = pts[tube.contains(pts)]
    return TubeEnergy(tube, _pair_powers(inside, s - 1), int(inside.shape[0]))


def riesz_sum(B, workers: Optional[int] = None, chunk: int = 512) -> float:
    """``sum over ordered x != y of 1/|x - y|``.

    Rows are processed in fixed blocks and the block sums are added in block
    order, so the result does not depend on the worker count.
    """
    pts = _coords(B)
    n = pts.shape[0]
    starts = list(range(0, n, chunk))

    def block(i0):
        rows = pts[i0 : i0 + chunk]
        dx = rows[:, 0, None] - pts[None, :, 0]
        dy = rows[:, 1, None] - pts[None, :, 1]
        dist = np.sqrt(dx * dx + dy * dy)
        k = np.arange(rows.shape[0])
        dist[k, i0 + k] = np.inf
        if np.any(dist == 0):
            raise ValueError("coincident points: the set is not delta-separated")
        return float(np.sum(1.0 / dist))

    return math.fsum(ordered_map(block, starts, workers))


# ---------------------------------------------------------------------------
# tube families
# ---------------------------------------------------------------------------


def _same_group_pairs(groups: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """All index pairs (i, j), i before j, sharing a group label."""
    order = np.argsort(groups, kind="stable")
    g = groups[order]
    left, right = [], []
    d = 1
    while d < g.size:
        same = g[d:] == g[:-d]
        if not same.any():
            break
        idx = np.nonzero(same)[0]
        left.append(order[idx])
        right.append(order[idx + d])
        d += 1
    if not left:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(left), np.concatenate(right)


@dataclass(frozen=True, eq=False)
class TubeFamily:
    """Partition of B into the tubes of one direction, with energies."""

    direction: Direction
    point_tube: np.ndarray
    tubes: np.ndarray
    counts: np.ndarray
    energies: np.ndarray
    budget: int
    survivors: Optional[np.ndarray] = None

    @property
    def nonempty(self) -> int:
        return int(self.tubes.size)

    @property
    def N(self) -> int:
        return min(self.nonempty, self.budget)

    @property
    def over_budget(self) -> bool:
        return self.nonempty > self.budget

    @property
    def average(self) -> float:
        return float(np.sum(self.energies)) / self.N

    def tube_of_point(self) -> np.ndarray:
        """Position of each point's tube in ``self.tubes``."""
        return np.searchsorted(self.tubes, self.point_tube)

    def surviving_points(self) -> np.ndarray:
        if self.survivors is None:
            raise ValueError("family has not been pruned")
        return self.survivors[self.tube_of_point()]


def tube_family(B, e, scale: Scale, s: float, budget: int) -> TubeFamily:
    _check_s(s)
    pts = _coords(B)
    e = e if isinstance(e, Direction) else Direction.from_vector(e)
    ids = tube_index(pts, e, scale)
    tubes, pos, counts = np.unique(ids, return_inverse=True, return_counts=True)
    i, j = _same_group_pairs(ids)
    energies = np.zeros(tubes.size)
    if i.size:
        d = np.hypot(*(pts[i] - pts[j]).T)
        if np.any(d == 0):
            raise ValueError("coincident points: the set is not delta-separated")
        energies = np.bincount(pos[i], weights=2.0 * d ** (s - 1), minlength=tubes.size)
    return TubeFamily(e, ids, tubes, counts, energies, budget)


@dataclass(frozen=True, eq=False)
class E0Selection:
    directions: DirectionSet
    families: tuple  # all families, aligned with ``all_directions``
    all_directions: DirectionSet
    kept: np.ndarray
    averages: np.ndarray
    threshold: float
    global_average: float
    markov_applies: bool
    flags: tuple

    @property
    def kept_families(self) -> List[TubeFamily]:
        return [f for f, k in zip(self.families, self.kept) if k]


def select_E0(B, E: DirectionSet, scale: Optional[Scale], params: FanParams, workers=None) -> E0Selection:
    """Keep the directions whose mean tube energy is below ``C_avg`` energy units."""
    scale = scale or E.scale
    if len(E) == 0:
        raise ValueError("direction set E is empty")
    budget = params.tube_budget(scale)
    fams = ordered_map(lambda e: tube_family(B, e, scale, params.s, budget), list(E), workers)
    averages = np.array([f.average for f in fams])
    unit = params.energy_unit(scale)
    threshold = params.C_avg * unit
    kept = averages < threshold
    global_average = float(np.mean(averages))
    # Markov: a mean below threshold/2 leaves at most half the directions above threshold
    markov = global_average <= threshold / 2
    flags = []
    over = sum(f.over_budget for f in fams)
    if over:
        flags.append(f"select_E0: {over}/{len(fams)} directions exceed the tube budget N={budget}")
    if markov and kept.sum() * 2 < len(E):
        raise AssertionError("Markov bound violated; energy bookkeeping is inconsistent")
    if not markov:
        flags.append(
            f"select_E0: mean energy {global_average / unit:.4g} units exceeds C_avg/2={params.C_avg / 2}; "
            "Markov retention not guaranteed"
        )
    if not kept.any():
        flags.append("select_E0: every direction discarded")
    E0 = DirectionSet(tuple(d for d, k in zip(E, kept) if k), scale, E.declared_s)
    return E0Selection(E0, tuple(fams), E, kept, averages, threshold, global_average, markov, tuple(flags))


@dataclass(frozen=True, eq=False)
class PrunedFamily:
    family: TubeFamily
    threshold: float
    coverage_before: int
    coverage_after: int
    single_point_tubes: int
    flags: tuple

    @property
    def coverage_ratio(self) -> float:
        return self.coverage_after / self.coverage_before if self.coverage_before else 0.0


def prune_family(fam: TubeFamily, params: FanParams, scale: Scale, default_D: bool = True) -> PrunedFamily:
    threshold = params.D(scale) * params.energy_unit(scale)
    multi = fam.counts >= 2
    survive = multi & (fam.energies < threshold)
    before = int(fam.counts[multi].sum())
    after = int(fam.counts[survive].sum())
    flags = []
    singles = int(np.count_nonzero(~multi))
    if singles > fam.budget:
        flags.append(f"prune_bad_tubes: {singles} single-point tubes exceed the budget N={fam.budget}")
    ratio = after / before if before else 0.0
    if default_D and ratio < params.coverage_floor:
        flags.append(f"prune_bad_tubes: coverage ratio {ratio:.4g} < {params.coverage_floor}")
    return PrunedFamily(replace(fam, survivors=survive), threshold, before, after, singles, tuple(flags))


def prune_bad_tubes(B, e, params: FanParams, scale: Scale) -> PrunedFamily:
    """Surviving tubes for direction e: at least two points and energy below ``D`` units."""
    fam = tube_family(B, e, scale, params.s, params.tube_budget(scale))
    return prune_family(fam, params, scale)


def count_related_pairs(families: Sequence[TubeFamily]) -> int:
    """``sum over ordered b != b'`` of the number of directions in which they share a surviving tube."""
    total = 0
    for f in families:
        c = f.counts[f.survivors].astype(np.int64)
        total += int(np.sum(c * (c - 1)))
    return total


# ---------------------------------------------------------------------------
# fans
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FanTube:
    direction: Direction
    index: int
    members: np.ndarray
    ray: Optional[np.ndarray] = None

    @property
    def angle(self) -> float:
        if self.ray is None:
            raise ValueError("tube has no oriented ray")
        return math.atan2(self.ray[1], self.ray[0])


@dataclass(frozen=True, eq=False)
class Fan:
    points: np.ndarray
    apex: int
    tubes: tuple
    tau: float
    threshold: float
    scale: Scale
    found: bool = True
    notes: tuple = ()
    quadrant: Optional[int] = None

    @property
    def apex_point(self) -> np.ndarray:
        return self.points[self.apex]

    @property
    def members(self) -> np.ndarray:
        if not self.tubes:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([t.members for t in self.tubes]))

    @property
    def mass(self) -> int:
        return int(self.members.size)

    @property
    def directions(self) -> List[Direction]:
        return [t.direction for t in self.tubes]

    def recount(self) -> int:
        """``|B ∩ union of the fan tubes|`` computed from scratch."""
        mask = np.zeros(self.points.shape[0], dtype=bool)
        for t in self.tubes:
            mask |= tube_index(self.points, t.direction, self.scale) == t.index
        return int(mask.sum())


@dataclass(frozen=True)
class NoFan:
    best_mass: int
    best_apex: int
    threshold: float
    tau: float
    found: bool = False


def _membership_matrix(families: Sequence[TubeFamily], n: int):
    rows, cols = [], []
    offset = 0
    for f in families:
        alive = f.surviving_points()
        pos = f.tube_of_point()
        col_of_tube = np.cumsum(f.survivors) - 1
        idx = np.nonzero(alive)[0]
        rows.append(idx)
        cols.append(offset + col_of_tube[pos[idx]])
        offset += int(f.survivors.sum())
    if offset == 0:
        return None
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return sparse.csr_matrix((np.ones(r.size, dtype=np.int32), (r, c)), shape=(n, offset))


def fan_masses(points: np.ndarray, families: Sequence[TubeFamily], chunk: int = 1024) -> np.ndarray:
    """``|G(b)|`` for every b, where G(b) is B ∩ the surviving tubes through b."""
    n = points.shape[0]
    M = _membership_matrix(families, n)
    if M is None:
        return np.zeros(n, dtype=np.int64)
    Mt = M.T.tocsc()
    out = np.empty(n, dtype=np.int64)
    for i0 in range(0, n, chunk):
        out[i0 : i0 + chunk] = (M[i0 : i0 + chunk] @ Mt).getnnz(axis=1)
    return out


def find_fan(B, families: Sequence[TubeFamily], params: FanParams, scale: Scale):
    """Apex maximising ``|G(b)|``; ties go to the lexicographically smallest point."""
    pts = _coords(B)
    masses = fan_masses(pts, families)
    threshold = params.fan_threshold(scale)
    best = int(masses.max()) if masses.size else 0
    cands = np.nonzero(masses == best)[0]
    apex = int(cands[np.lexsort((pts[cands, 1], pts[cands, 0]))[0]]) if cands.size else -1
    if best < threshold or apex < 0:
        return NoFan(best, apex, threshold, params.tau)
    tubes = []
    for f in families:
        pos = f.tube_of_point()
        k = pos[apex]
        if not f.survivors[k]:
            continue
        members = np.nonzero(pos == k)[0]
        tubes.append(FanTube(f.direction, int(f.tubes[k]), members))
    return Fan(pts, apex, tuple(tubes), params.tau, threshold, scale)


def fan_to_record(fan: Fan) -> str:
    """Line-oriented ``key=value`` record of a fan."""
    ax, ay = fan.apex_point
    lines = [
        "[fan]",
        f"scale={fan.scale.m}",
        f"apex={fan.apex}",
        f"apex_point={float(ax)!r} {float(ay)!r}",
        f"tau={fan.tau!r}",
        f"threshold={fan.threshold!r}",
        f"member_count={fan.mass}",
        "directions=" + ",".join(repr(t.direction.theta) for t in fan.tubes),
        "tube_indices=" + ",".join(str(t.index) for t in fan.tubes),
    ]
    return "\n".join(lines) + "\n"


def fan_from_record(text: str, B) -> Fan:
    """Rebuild a fan from its record and the point set it was extracted from."""
    kv = dict(ln.split("=", 1) for ln in text.splitlines() if "=" in ln)
    pts = _coords(B)
    scale = Scale(int(kv["scale"]))
    thetas = [float(v) for v in kv["directions"].split(",") if v]
    idxs = [int(v) for v in kv["tube_indices"].split(",") if v]
    tubes = []
    for th, n in zip(thetas, idxs):
        d = Direction(th)
        tubes.append(FanTube(d, n, np.nonzero(tube_index(pts, d, scale) == n)[0]))
    fan = Fan(pts, int(kv["apex"]), tuple(tubes), float(kv["tau"]), float(kv["threshold"]), scale)
    if fan.mass != int(kv["member_count"]):
        raise ValueError(f"record member_count {kv['member_count']} does not match recount {fan.mass}")
    return fan


# ---------------------------------------------------------------------------
# planted fans
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PlantedFan:
    points: PointSet2D
    directions: DirectionSet
    apex: int
    planted: np.ndarray
    rays: np.ndarray

    @property
    def planted_mass(self) -> int:
        return int(self.planted.size)


def gen_planted_fan(
    scale: Scale,
    n_tubes: int,
    per_tube: int,
    noise: float = 0.2,
    seed: int = 0,
    quadrant: int = 0,
    r_min: float = 0.05,
    r_max: float = 1.0,
) -> PlantedFan:
    """Rays from one apex into a quadrant, ``per_tube`` points on each, plus noise.

    Ray angles are ``(i + 0.25 + jitter) * (pi/2) / n_tubes`` rotated into
    the quadrant, so consecutive rays are at least ``0.6 * (pi/2) / n_tubes``
    apart.  The returned directions are the ray normals, whose tubes contain
    the rays.
    """
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    gap = (math.pi / 2) / n_tubes
    phi = (np.arange(n_tubes) + 0.25 + rng.uniform(-0.2, 0.2, n_tubes)) * gap + quadrant * math.pi / 2
    rays = np.column_stack([np.cos(phi), np.sin(phi)])
    sx, sy = np.sign(np.cos(phi.mean())), np.sign(np.sin(phi.mean()))
    lo = np.array([0.1 if sx > 0 else 1.1, 0.1 if sy > 0 else 1.1])
    apex = lo + rng.uniform(0, 0.1, 2)
    h = (r_max - r_min) / per_tube
    dist = r_min + (np.arange(per_tube)[None, :] + rng.uniform(0, 0.5, (n_tubes, per_tube))) * h
    ray_pts = apex[None, None, :] + dist[..., None] * rays[:, None, :]
    planted = ray_pts.reshape(-1, 2)
    pts = np.vstack([apex[None, :], planted])
    n_noise = int(round(noise * planted.shape[0]))
    noise_pts: List[np.ndarray] = []
    tree = cKDTree(pts)
    while len(noise_pts) < n_noise:
        cand = rng.uniform(0, 1.25, 2)
        if tree.query_ball_point(cand, scale.delta, return_length=True) == 0 and all(
            np.hypot(*(cand - q)) >= scale.delta for q in noise_pts
        ):
            noise_pts.append(cand)
    if noise_pts:
        pts = np.vstack([pts, np.array(noise_pts)])
    normals = DirectionSet.from_angles(phi + math.pi / 2, scale)
    return PlantedFan(
        PointSet2D(pts, scale), normals, 0, np.arange(1, planted.shape[0] + 1), rays
    )
