"""Post-fan processing and vector-sum counting.

Starting from a fan with apex b0, the members are restricted to one quadrant
around b0, heavy and near-apex points are removed, and the rich tubes are
ordered by angle.  For consecutive rich tubes the sums ``(x + y) - b0`` land
in the open cone between the two rays, outside both tubes; distinct delta-cells
of these sums give a lower bound for ``N_delta((A+A) x (A+A))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from ._workers import ordered_map
from .projections import DirectionSet, exceptional_parameters, sumset_entropy
from .sets import PointSet1D, Scale, dyadic_radii, nonconcentration, product_set
from .tubes import (
    S_MAX,
    Fan,
    FanParams,
    FanTube,
    NoFan,
    find_fan,
    prune_family,
    select_E0,
    tube_index,
)

# sign pattern of each quadrant, counter-clockwise from the north-east
QUADRANTS = ((1, 1), (-1, 1), (-1, -1), (1, -1))
QUADRANT_NAMES = ("NE", "NW", "SW", "SE")


@dataclass(frozen=True)
class StageNote:
    stage: str
    status: str  # "pass" or "flag"
    measured: dict
    budget: dict
    message: str = ""


def _note(fan: Fan, note: StageNote) -> Fan:
    return replace(fan, notes=fan.notes + (note,))


# ---------------------------------------------------------------------------
# quadrant restriction
# ---------------------------------------------------------------------------


def _in_quadrant(v: np.ndarray, q: int) -> np.ndarray:
    sx, sy = QUADRANTS[q]
    return (sx * v[..., 0] >= 0) & (sy * v[..., 1] >= 0)


def quartile_filter(fan: Fan, B=None) -> Fan:
    """Keep the quadrant around the apex holding most members.

    Tubes whose line does not point into that quadrant are dropped; the rest
    get the ray orientation pointing into it.
    """
    pts = fan.points if B is None else np.asarray(getattr(B, "points", B), dtype=float)
    b0 = pts[fan.apex]
    members = fan.members
    others = members[members != fan.apex]
    rel = pts[others] - b0
    counts = [int(np.count_nonzero(_in_quadrant(rel, q))) for q in range(4)]
    q = int(np.argmax(counts))
    inside = np.zeros(pts.shape[0], dtype=bool)
    inside[others[_in_quadrant(rel, q)]] = True
    inside[fan.apex] = True
    tubes = []
    for t in fan.tubes:
        e = t.direction.unit
        v = np.array([-e[1], e[0]])
        if _in_quadrant(v, q):
            ray = v
        elif _in_quadrant(-v, q):
            ray = -v
        else:
            continue
        kept = t.members[inside[t.members]]
        if kept.size and np.any(kept != fan.apex):
            tubes.append(FanTube(t.direction, t.index, kept, ray))
    out = replace(fan, points=pts, tubes=tuple(tubes), quadrant=q)
    retained, before = out.mass, fan.mass
    status = "pass" if 4 * retained >= before else "flag"
    msg = "" if status == "pass" else f"retained mass {retained} below a quarter of {before}"
    return _note(
        out,
        StageNote(
            "quartile_filter",
            status,
            {"quadrant": QUADRANT_NAMES[q], "mass_in": before, "mass_out": retained, "quadrant_counts": counts},
            {"min_mass": before / 4, "fan_threshold": fan.threshold},
            msg,
        ),
    )


# ---------------------------------------------------------------------------
# heavy points and the exclusion ball
# ---------------------------------------------------------------------------


def heavy_threshold(params: FanParams, scale: Scale) -> float:
    return params.C_heavy * scale.power(params.s - 1 - 2 * params.kappa) * scale.m**1.5


def _point_energies(pts: np.ndarray, s: float) -> np.ndarray:
    if pts.shape[0] < 2:
        return np.zeros(pts.shape[0])
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    np.fill_diagonal(d, np.inf)
    return np.sum(d ** (s - 1), axis=1)


def prune_heavy_points(fan: Fan, params: FanParams) -> Fan:
    """Remove every point whose energy inside one of its fan tubes is too large."""
    scale = fan.scale
    threshold = heavy_threshold(params, scale)
    heavy = np.zeros(fan.points.shape[0], dtype=bool)
    max_energy = 0.0
    for t in fan.tubes:
        en = _point_energies(fan.points[t.members], params.s)
        if en.size:
            max_energy = max(max_energy, float(en.max()))
        heavy[t.members[en >= threshold]] = True
    tubes = []
    for t in fan.tubes:
        kept = t.members[~heavy[t.members]]
        if kept.size:
            tubes.append(replace(t, members=kept))
    out = replace(fan, tubes=tuple(tubes))
    # local count bound implied by the energy cap: |T ∩ B(x,r)| <= H r^(1-s)
    unit = scale.power(-2 * params.kappa) * scale.m**1.5
    local = 0.0
    for t in out.tubes:
        p = out.points[t.members]
        if p.shape[0] < 2:
            continue
        d = np.hypot(p[:, None, 0] - p[None, :, 0], p[:, None, 1] - p[None, :, 1])
        for r in dyadic_radii(scale):
            c = np.count_nonzero(d <= r, axis=1).max()
            local = max(local, float(c) / (unit * (r / scale.delta) ** (1 - params.s)))
    before, after = fan.mass, out.mass
    status = "pass" if 2 * after >= before else "flag"
    msg = "" if status == "pass" else f"surviving mass {after} below half of {before}"
    return _note(
        out,
        StageNote(
            "prune_heavy_points",
            status,
            {
                "removed": int(heavy[fan.members].sum()),
                "mass_in": before,
                "mass_out": after,
                "max_energy": max_energy,
                "local_count_constant": float(local),
            },
            {"energy_threshold": threshold, "min_mass": before / 2},
            msg,
        ),
    )


def exclusion_radius(params: FanParams, scale: Scale) -> float:
    return params.C_near * scale.power(1 - params.s)


def remove_near_apex(fan: Fan, params: FanParams) -> Fan:
    """Drop members within ``C_near * delta**(1-s)`` of the apex (the apex included)."""
    scale = fan.scale
    R = exclusion_radius(params, scale)
    b0 = fan.apex_point
    dist = np.hypot(*(fan.points - b0).T)
    near = dist <= R
    near[fan.apex] = True
    members = fan.members
    removed = int(near[members].sum())
    tubes = []
    for t in fan.tubes:
        kept = t.members[~near[t.members]]
        if kept.size:
            tubes.append(replace(t, members=kept))
    out = replace(fan, tubes=tuple(tubes))
    budget = 8 * params.C_near * scale.power(-params.s)
    msgs = []
    if removed > budget:
        msgs.append(f"removed {removed} points near the apex, above {budget:.4g}")
    if out.mass == 0:
        msgs.append("every member lies in the exclusion ball")
    return _note(
        out,
        StageNote(
            "remove_near_apex",
            "flag" if msgs else "pass",
            {"removed": removed, "mass_out": out.mass, "radius": R},
            {"max_removed": budget},
            "; ".join(msgs),
        ),
    )


# ---------------------------------------------------------------------------
# rich tubes and white regions
# ---------------------------------------------------------------------------


class RichTubeError(ValueError):
    def __init__(self, message, count, threshold):
        super().__init__(message)
        self.count = count
        self.threshold = threshold


@dataclass(frozen=True, eq=False)
class RichTubes:
    tubes: tuple
    threshold: float
    budget: float
    note: StageNote

    def __len__(self):
        return len(self.tubes)


def _bisector(q: int) -> np.ndarray:
    sx, sy = QUADRANTS[q]
    return np.array([sx, sy]) / math.sqrt(2.0)


def _ray_order_key(ray: np.ndarray, q: Optional[int]) -> float:
    if q is None:
        return math.atan2(ray[1], ray[0])
    b = _bisector(q)
    return math.atan2(b[0] * ray[1] - b[1] * ray[0], b @ ray)


def select_rich_tubes(fan: Fan, params: FanParams) -> RichTubes:
    """Tubes holding at least ``c_rich * delta**(kappa + s - 1)`` members, in counter-clockwise ray order."""
    scale = fan.scale
    if any(t.ray is None for t in fan.tubes):
        raise ValueError("fan tubes carry no ray orientation; run quartile_filter first")
    threshold = params.c_rich * scale.power(params.kappa + params.s - 1)
    rich = [t for t in fan.tubes if t.members.size >= threshold]
    rich.sort(key=lambda t: _ray_order_key(t.ray, fan.quadrant))
    budget = params.c_rich * scale.power(4 * params.kappa - params.s)
    if len(rich) < 2:
        raise RichTubeError(
            f"{len(rich)} tubes reach {threshold:.4g} members; need 2", len(rich), threshold
        )
    met = fan.threshold <= fan.mass
    status = "flag" if met and len(rich) < budget else "pass"
    msg = f"{len(rich)} rich tubes, below {budget:.4g}" if status == "flag" else ""
    note = StageNote(
        "select_rich_tubes",
        status,
        {"rich": len(rich), "tubes_in": len(fan.tubes), "max_members": max(t.members.size for t in rich)},
        {"member_threshold": threshold, "min_rich": budget},
        msg,
    )
    return RichTubes(tuple(rich), threshold, budget, note)


@dataclass(frozen=True, eq=False)
class WhiteRegion:
    """Open cone between the rays of tubes j and j+1, minus both tubes and the exclusion ball."""

    j: int
    apex: np.ndarray
    lower: FanTube
    upper: FanTube
    scale: Scale
    radius: float = 0.0

    def contains(self, p) -> np.ndarray:
        return white_region_membership(self, p)


def _side(t: FanTube, toward: np.ndarray) -> int:
    return 1 if t.direction.unit @ toward > 0 else -1


def white_region_membership(W: WhiteRegion, p):
    """Beyond tube j on the side of ray j+1 and beyond tube j+1 on the side of ray j.

    Both tubes contain the apex, so these two tube-index conditions carve out
    the open cone between the rays with both slabs removed.
    """
    p = np.asarray(p, dtype=float)
    pts = p.reshape(-1, 2)
    ok = np.ones(pts.shape[0], dtype=bool)
    for t, other in ((W.lower, W.upper), (W.upper, W.lower)):
        idx = tube_index(pts, t.direction, W.scale)
        idx = np.atleast_1d(idx)
        ok &= idx > t.index if _side(t, other.ray) > 0 else idx < t.index
    if W.radius > 0:
        ok &= np.hypot(*(pts - W.apex).T) > W.radius
    return bool(ok[0]) if p.ndim == 1 else ok


def white_region_oracle(W: WhiteRegion, p) -> np.ndarray:
    """Cone test by cross products plus slab tests by signed offsets from the tube centre lines."""
    pts = np.asarray(p, dtype=float).reshape(-1, 2)
    v = pts - W.apex
    a, b = W.lower.ray, W.upper.ray
    orient = np.sign(a[0] * b[1] - a[1] * b[0])
    in_cone = (orient * (a[0] * v[:, 1] - a[1] * v[:, 0]) > 0) & (orient * (v[:, 0] * b[1] - v[:, 1] * b[0]) > 0)
    d = W.scale.delta
    ok = in_cone
    for t in (W.lower, W.upper):
        w = pts @ t.direction.unit - (2 * t.index + 1) * d
        ok = ok & ((w >= d) | (w < -d))
    if W.radius > 0:
        ok &= np.hypot(v[:, 0], v[:, 1]) > W.radius
    return ok


def white_regions(fan: Fan, rich: RichTubes, radius: float = 0.0) -> List[WhiteRegion]:
    b0 = fan.apex_point
    ts = rich.tubes
    return [WhiteRegion(j, b0, ts[j], ts[j + 1], fan.scale, radius) for j in range(len(ts) - 1)]


def check_ray_order(regions: Sequence[WhiteRegion]) -> bool:
    """Consecutive rays turn strictly counter-clockwise and the whole sweep stays below pi."""
    if not regions:
        return True
    rays = [regions[0].lower.ray] + [W.upper.ray for W in regions]
    total = 0.0
    for a, b in zip(rays, rays[1:]):
        ang = math.atan2(a[0] * b[1] - a[1] * b[0], a @ b)
        if ang <= 0:
            return False
        total += ang
    return total < math.pi


def sample_double_membership(regions: Sequence[WhiteRegion], n: int = 10_000, seed: int = 0, r_max: float = 2.0) -> int:
    """Sample n points in each cone and count those that also fall in another region."""
    rng = np.random.default_rng(seed)
    bad = 0
    for W in regions:
        a0 = math.atan2(W.lower.ray[1], W.lower.ray[0])
        span = math.atan2(
            W.lower.ray[0] * W.upper.ray[1] - W.lower.ray[1] * W.upper.ray[0], W.lower.ray @ W.upper.ray
        )
        ang = a0 + rng.uniform(0, span, n)
        rad = rng.uniform(0, r_max, n)
        pts = W.apex + rad[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
        mine = white_region_membership(W, pts)
        for V in regions:
            if V is not W:
                bad += int(np.count_nonzero(mine & white_region_membership(V, pts)))
    return bad


# ---------------------------------------------------------------------------
# counting sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionCount:
    j: int
    pairs: int
    cells: int
    violations: int
    max_multiplicity: int


@dataclass(frozen=True)
class SumCountReport:
    per_region: tuple
    total: int
    n_rich: int
    violations: int
    max_multiplicity: int
    multiplicity_bound: float
    kappa: float
    lower_exponent: float
    measured_constant: float
    union_cells: int

    @property
    def counts(self) -> List[int]:
        return [r.cells for r in self.per_region]

    @property
    def sumset_lower_bound(self) -> float:
        """``N_delta(A+A) >= sqrt(total)``, since the sums lie in ``(A+A) x (A+A) - b0``."""
        return math.sqrt(self.total)


def _cells(points: np.ndarray, scale: Scale) -> np.ndarray:
    return np.floor(points / scale.delta).astype(np.int64)


def count_pair_sums(X: np.ndarray, Y: np.ndarray, W: WhiteRegion) -> tuple:
    """Distinct delta-cells of ``(x + y) - b0`` inside W, with violations and max multiplicity."""
    sums = (X[:, None, :] + Y[None, :, :]).reshape(-1, 2) - W.apex
    inside = white_region_membership(W, sums) if sums.shape[0] else np.zeros(0, dtype=bool)
    cells = _cells(sums[inside], W.scale)
    if cells.shape[0] == 0:
        return cells, 0, int((~inside).sum()), 0
    uniq, mult = np.unique(cells, axis=0, return_counts=True)
    return uniq, int(uniq.shape[0]), int((~inside).sum()), int(mult.max())


def count_separated_sums(
    fan: Fan, rich: RichTubes, scale: Optional[Scale] = None, params: Optional[FanParams] = None, workers=None
) -> SumCountReport:
    scale = scale or fan.scale
    tubes = rich.tubes if isinstance(rich, RichTubes) else tuple(rich)
    if len(tubes) < 2:
        raise ValueError("need at least two rich tubes")
    gap_min = scale.power(params.s) / 2 if params else 0.0
    for a, b in zip(tubes, tubes[1:]):
        gap = abs(math.atan2(a.ray[0] * b.ray[1] - a.ray[1] * b.ray[0], a.ray @ b.ray))
        if gap < gap_min:
            raise ValueError(f"tube directions {gap:.3g} apart, below delta^s/2 = {gap_min:.3g}: separation violated")
    b0 = fan.apex_point
    regions = [WhiteRegion(j, b0, tubes[j], tubes[j + 1], scale) for j in range(len(tubes) - 1)]

    def work(W):
        X = fan.points[W.lower.members]
        Y = fan.points[W.upper.members]
        cells, n, viol, mult = count_pair_sums(X, Y, W)
        return RegionCount(W.j, X.shape[0] * Y.shape[0], n, viol, mult), cells

    results = ordered_map(work, regions, workers)
    per = tuple(r for r, _ in results)
    all_cells = np.concatenate([c for _, c in results]) if results else np.zeros((0, 2), dtype=np.int64)
    union = int(np.unique(all_cells, axis=0).shape[0]) if all_cells.size else 0
    total = sum(r.cells for r in per)
    if params is not None:
        kappa = params.kappa
        s = params.s
        mbound = params.K_mult * scale.power(s * (s - 1) - 3 * kappa)
        lower = 9 * kappa + 2 * s - s * s - 2
        measured = total / scale.power(lower)
    else:
        kappa = mbound = lower = measured = float("nan")
    return SumCountReport(
        per_region=per,
        total=total,
        n_rich=len(tubes),
        violations=sum(r.violations for r in per),
        max_multiplicity=max((r.max_multiplicity for r in per), default=0),
        multiplicity_bound=mbound,
        kappa=kappa,
        lower_exponent=lower,
        measured_constant=measured,
        union_cells=union,
    )


def brute_force_sum_cells(X: np.ndarray, Y: np.ndarray, b0: np.ndarray, scale: Scale) -> int:
    """Distinct delta-cells of ``(x + y) - b0`` by a set of integer tuples."""
    d = scale.delta
    seen = set()
    for x in X:
        for y in Y:
            seen.add((math.floor((x[0] + y[0] - b0[0]) / d), math.floor((x[1] + y[1] - b0[1]) / d)))
    return len(seen)


# ---------------------------------------------------------------------------
# the full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageRecord:
    name: str
    status: str  # pass | flag | error | skipped
    measured: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)
    message: str = ""


@dataclass(frozen=True)
class Witness:
    t: float
    entropy: int
    threshold: float


STAGES = (
    "validate",
    "sweep",
    "select_E0",
    "prune_bad_tubes",
    "find_fan",
    "quartile_filter",
    "prune_heavy_points",
    "remove_near_apex",
    "select_rich_tubes",
    "count_separated_sums",
    "bridge",
)


@dataclass(frozen=True)
class PipelineReport:
    m: int
    s: float
    sigma: float
    mode: str  # "witness", "fan" or "diagnosis"
    stages: tuple
    witness: Optional[Witness] = None
    bounds: dict = field(default_factory=dict)

    @property
    def flags(self) -> List[StageRecord]:
        return [r for r in self.stages if r.status in ("flag", "error")]

    def stage(self, name: str) -> StageRecord:
        for r in self.stages:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "s": self.s,
            "sigma": self.sigma,
            "mode": self.mode,
            "witness": asdict(self.witness) if self.witness else None,
            "bounds": self.bounds,
            "stages": [asdict(r) for r in self.stages],
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"pipeline m={self.m} s={self.s} sigma={self.sigma}: {self.mode}"]
        if self.witness:
            w = self.witness
            lines.append(f"  witness t={w.t!r} entropy={w.entropy} > {w.threshold:.6g}")
        for r in self.stages:
            extra = f"  ({r.message})" if r.message else ""
            lines.append(f"  {r.name:<22}{r.status}{extra}")
        return "\n".join(lines) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _from_note(n: StageNote) -> StageRecord:
    return StageRecord(n.stage, n.status, dict(n.measured), dict(n.budget), n.message)


def sum_product_pipeline(
    A: PointSet1D,
    E: Sequence[float],
    scale: Optional[Scale] = None,
    s: float = 0.55,
    sigma: float = 0.5,
    params: Optional[FanParams] = None,
    workers=None,
) -> PipelineReport:
    """Either a parameter t with a large sumset ``A + tA``, or a stage-by-stage trace of the fan argument."""
    scale = scale or A.scale
    if not 0.5 <= s < S_MAX:
        raise ValueError(f"s = {s} outside the admissible range [1/2, 2 - sqrt(2)) = [0.5, {S_MAX:.6f})")
    ts = sorted(set(float(t) for t in E))
    if not ts:
        raise ValueError("parameter set E is empty")
    params = params or FanParams(s=s, sigma=sigma)
    if params.s != s or params.sigma != sigma:
        raise ValueError("params.s / params.sigma disagree with the s, sigma arguments")
    records: List[StageRecord] = []

    # input checks
    ncA = nonconcentration(A, scale, 0.5)
    gaps = np.diff(ts)
    separated = bool(gaps.size == 0 or gaps.min() >= scale.power(s) * (1 - 1e-12))
    msgs = []
    if ncA.constant > 8:
        msgs.append(f"A has (delta,1/2) constant {ncA.constant:.4g} > 8")
    if not separated:
        msgs.append("E is not delta^s-separated; running in nonConE mode")
    card = params.c_card * scale.power(-sigma)
    if len(ts) < card:
        msgs.append(f"|E| = {len(ts)} below c_card*delta^-sigma = {card:.4g}")
    records.append(
        StageRecord(
            "validate",
            "flag" if msgs else "pass",
            {"A_size": len(A.points), "A_constant": ncA.constant, "E_size": len(ts), "E_separated": separated},
            {"A_constant": 8, "E_size": card},
            "; ".join(msgs),
        )
    )

    # stage (i)
    sweep = exceptional_parameters(A, scale, s, params.C_E, T=ts, workers=workers)
    ent = [r.entropy for r in sweep.rows]
    threshold = params.C_E * scale.power(-s)
    best = int(np.argmax(ent))
    sweep_rec = StageRecord(
        "sweep",
        "pass",
        {"max_entropy": ent[best], "argmax_t": sweep.rows[best].t, "min_entropy": min(ent)},
        {"entropy_threshold": threshold},
    )
    records.append(sweep_rec)
    if ent[best] > threshold:
        w = Witness(sweep.rows[best].t, ent[best], threshold)
        records.extend(StageRecord(n, "skipped") for n in STAGES[len(records) :])
        return PipelineReport(scale.m, s, sigma, "witness", tuple(records), w, {"witness_entropy": ent[best]})

    # stage (ii)
    B = product_set(A, A)
    measured_sumset = sumset_entropy(A, 1.0, scale)
    bounds = {
        "measured_sumset": measured_sumset,
        "contradiction_exponent": 5 * params.kappa + s - s * s / 2 - 1,
        "kappa": params.kappa,
        "tau": params.tau,
    }

    def finish(mode):
        records.extend(StageRecord(n, "skipped") for n in STAGES[len(records) :])
        return PipelineReport(scale.m, s, sigma, mode, tuple(records), None, bounds)

    dirs = DirectionSet.from_slopes(ts, scale, declared_s=s)
    sel = select_E0(B, dirs, scale, params, workers=workers)
    unit = params.energy_unit(scale)
    records.append(
        StageRecord(
            "select_E0",
            "flag" if sel.flags else "pass",
            {"kept": int(sel.kept.sum()), "total": len(dirs), "mean_energy_units": sel.global_average / unit},
            {"energy_threshold_units": params.C_avg, "min_kept": len(dirs) / 2},
            "; ".join(sel.flags),
        )
    )
    if not sel.kept.any():
        records.append(StageRecord("prune_bad_tubes", "error", message="no direction survives select_E0"))
        return finish("diagnosis")

    pruned = [prune_family(f, params, scale) for f in sel.kept_families]
    pflags = [fl for p in pruned for fl in p.flags]
    ratios = [p.coverage_ratio for p in pruned]
    records.append(
        StageRecord(
            "prune_bad_tubes",
            "flag" if pflags else "pass",
            {
                "min_coverage_ratio": min(ratios),
                "single_point_tubes": sum(p.single_point_tubes for p in pruned),
                "flagged_directions": sum(bool(p.flags) for p in pruned),
            },
            {"coverage_floor": params.coverage_floor, "energy_threshold": pruned[0].threshold},
            "; ".join(sorted(set(pflags))),
        )
    )

    fan = find_fan(B, [p.family for p in pruned], params, scale)
    if isinstance(fan, NoFan):
        records.append(
            StageRecord(
                "find_fan",
                "error",
                {"best_mass": fan.best_mass, "best_apex": fan.best_apex},
                {"fan_threshold": fan.threshold},
                f"no fan: best mass {fan.best_mass} below {fan.threshold:.4g}",
            )
        )
        return finish("diagnosis")
    records.append(
        StageRecord(
            "find_fan",
            "pass",
            {"mass": fan.mass, "apex": fan.apex, "tubes": len(fan.tubes)},
            {"fan_threshold": fan.threshold},
        )
    )

    fan = quartile_filter(fan)
    fan = prune_heavy_points(fan, params)
    fan = remove_near_apex(fan, params)
    records.extend(_from_note(n) for n in fan.notes)
    try:
        rich = select_rich_tubes(fan, params)
    except RichTubeError as exc:
        records.append(
            StageRecord(
                "select_rich_tubes", "error", {"rich": exc.count}, {"member_threshold": exc.threshold}, str(exc)
            )
        )
        return finish("diagnosis")
    records.append(_from_note(rich.note))

    try:
        rep = count_separated_sums(fan, rich, scale, params, workers=workers)
    except ValueError as exc:
        records.append(StageRecord("count_separated_sums", "error", message=str(exc)))
        return finish("diagnosis")
    cmsg = []
    if rep.violations:
        cmsg.append(f"{rep.violations} sums outside their white region")
    if rep.max_multiplicity > rep.multiplicity_bound:
        cmsg.append(f"cell multiplicity {rep.max_multiplicity} above {rep.multiplicity_bound:.4g}")
    if rep.union_cells != rep.total:
        cmsg.append(f"cells shared between regions: union {rep.union_cells} vs total {rep.total}")
    records.append(
        StageRecord(
            "count_separated_sums",
            "flag" if cmsg else "pass",
            {
                "total": rep.total,
                "per_region": rep.counts,
                "max_multiplicity": rep.max_multiplicity,
                "measured_constant": rep.measured_constant,
            },
            {"multiplicity_bound": rep.multiplicity_bound, "lower_exponent": rep.lower_exponent},
            "; ".join(cmsg),
        )
    )

    lb = rep.sumset_lower_bound
    ok = lb <= measured_sumset
    bounds.update(sum_count_total=rep.total, sumset_lower_bound=lb)
    contra = scale.power(bounds["contradiction_exponent"])
    records.append(
        StageRecord(
            "bridge",
            "pass" if ok else "flag",
            {"sumset_lower_bound": lb, "measured_sumset": measured_sumset, "forced_size": contra},
            {"sumset_threshold": threshold},
            "" if ok else f"sqrt(total) = {lb:.4g} exceeds the measured N(A+A) = {measured_sumset}",
        )
    )
    return PipelineReport(scale.m, s, sigma, "fan", tuple(records), None, bounds)
