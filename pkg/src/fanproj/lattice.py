"""Exact integer-lattice incidence geometry.

Points are integer pairs, directions are primitive vectors identified with
their negatives, lines are normalised integer triples.  Nothing here uses
floating point except the exponents that size thresholds.

A slope ``v`` passed to the projection helpers is the *fibre* direction:
two points project to the same value exactly when their difference is
parallel to ``v``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ._workers import ordered_map

COORD_LIMIT = 1 << 30  # keeps every cross product below 2**62


def _ceil_power(n: int, e: float) -> int:
    """``ceil(n**e)``, snapping to an integer when within rounding error."""
    x = n**e
    r = round(x)
    return int(r) if abs(x - r) < 1e-9 * max(1.0, x) else math.ceil(x)


def as_points(P) -> np.ndarray:
    arr = np.asarray(P, dtype=np.int64).reshape(-1, 2)
    if arr.size and np.abs(arr).max() >= COORD_LIMIT:
        raise OverflowError("coordinates must stay below 2**30 in absolute value")
    return arr


# ---------------------------------------------------------------------------
# slopes and lines
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Slope:
    """Primitive (a, b) with b > 0, or (1, 0)."""

    a: int
    b: int

    def __post_init__(self):
        a, b = int(self.a), int(self.b)
        if a == 0 and b == 0:
            raise ValueError("zero vector has no slope")
        g = math.gcd(a, b)
        a, b = a // g, b // g
        if b < 0 or (b == 0 and a < 0):
            a, b = -a, -b
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def of(cls, p, q) -> "Slope":
        return cls(int(p[0]) - int(q[0]), int(p[1]) - int(q[1]))


HORIZONTAL = Slope(1, 0)
VERTICAL = Slope(0, 1)


def canonical_slopes(d: np.ndarray) -> np.ndarray:
    """Vectorised Slope normalisation of difference vectors (rows)."""
    d = np.asarray(d, dtype=np.int64).reshape(-1, 2)
    if np.any((d[:, 0] == 0) & (d[:, 1] == 0)):
        raise ValueError("pair of equal points has no slope")
    g = np.gcd(d[:, 0], d[:, 1])
    a, b = d[:, 0] // g, d[:, 1] // g
    flip = (b < 0) | ((b == 0) & (a < 0))
    return np.column_stack([np.where(flip, -a, a), np.where(flip, -b, b)])


@dataclass(frozen=True, order=True)
class LatticeLine:
    """``A x + B y = C`` with gcd(A, B, C) = 1 and (A, B) lexicographically positive."""

    A: int
    B: int
    C: int

    def __post_init__(self):
        A, B, C = int(self.A), int(self.B), int(self.C)
        if A == 0 and B == 0:
            raise ValueError("(A, B) must not both vanish")
        g = math.gcd(math.gcd(A, B), C)
        A, B, C = A // g, B // g, C // g
        if A < 0 or (A == 0 and B < 0):
            A, B, C = -A, -B, -C
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @classmethod
    def through(cls, p, q) -> "LatticeLine":
        v = Slope.of(p, q)
        return cls.with_slope(v, p)

    @classmethod
    def with_slope(cls, v: Slope, p) -> "LatticeLine":
        return cls(v.b, -v.a, v.b * int(p[0]) - v.a * int(p[1]))

    @property
    def slope(self) -> Slope:
        return Slope(-self.B, self.A)

    def contains(self, p) -> bool:
        return self.A * int(p[0]) + self.B * int(p[1]) == self.C


def line_keys(P: np.ndarray, v: Slope) -> np.ndarray:
    """Key of the line with slope v through each point; equal keys mean the same line."""
    P = as_points(P)
    return v.b * P[:, 0] - v.a * P[:, 1]


# ---------------------------------------------------------------------------
# direction sets, projections, pair counts
# ---------------------------------------------------------------------------


def all_pairs(n: int) -> np.ndarray:
    """Ordered pairs (i, j), i != j."""
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    return np.column_stack([i, j]).astype(np.int64)


def _check_pairs(G: np.ndarray, n: int) -> np.ndarray:
    G = np.asarray(G, dtype=np.int64).reshape(-1, 2)
    if G.size and (G.min() < 0 or G.max() >= n):
        raise ValueError("pair index out of range")
    if np.any(G[:, 0] == G[:, 1]):
        raise ValueError("pair (i, i) is not allowed")
    return G


def pair_slopes(P, G) -> np.ndarray:
    P = as_points(P)
    G = _check_pairs(G, P.shape[0])
    return canonical_slopes(P[G[:, 0]] - P[G[:, 1]])


def direction_set(P, G) -> List[Slope]:
    """Distinct slopes spanned by the pairs in G, sorted."""
    sl = pair_slopes(P, G)
    if sl.shape[0] == 0:
        return []
    return [Slope(int(a), int(b)) for a, b in np.unique(sl, axis=0)]


def slope_pair_counts(P, G) -> Dict[Slope, int]:
    sl = pair_slopes(P, G)
    if sl.shape[0] == 0:
        return {}
    u, c = np.unique(sl, axis=0, return_counts=True)
    return {Slope(int(a), int(b)): int(k) for (a, b), k in zip(u, c)}


def projection_count(P, v: Slope) -> int:
    """Number of distinct lines with slope v through P, i.e. ``|pi(P)|`` for the projection collapsing v."""
    P = as_points(P)
    return int(np.unique(line_keys(P, v)).size) if P.shape[0] else 0


def kaufman_pair_count(P, v: Slope) -> int:
    """Ordered pairs p != q with p - q parallel to v, summed line by line."""
    P = as_points(P)
    if P.shape[0] < 2:
        return 0
    _, c = np.unique(line_keys(P, v), return_counts=True)
    return int(np.sum(c * (c - 1)))


def kaufman_pair_count_bruteforce(P, v: Slope) -> int:
    pts = [(int(x), int(y)) for x, y in as_points(P)]
    total = 0
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            if i != j and (p[0] - q[0]) * v.b - (p[1] - q[1]) * v.a == 0:
                total += 1
    return total


@dataclass(frozen=True)
class BadDirection:
    slope: Slope
    projection_count: int
    pair_count: int


def bad_directions(P, s: float, C_bad: float = 1.0) -> List[BadDirection]:
    """Slopes whose projection has at most ``C_bad * n**s`` values.

    Candidates are the pair-spanned slopes plus both axes.  A slope carrying
    K ordered pairs has at least ``n**2/(K + n)`` lines (Cauchy-Schwarz), so
    only slopes with enough pairs are counted exactly.
    """
    if C_bad < 1:
        raise ValueError(f"C_bad must be >= 1, got {C_bad}")
    P = as_points(P)
    n = P.shape[0]
    limit = C_bad * n**s
    counts = slope_pair_counts(P, all_pairs(n)) if n >= 2 else {}
    for ax in (HORIZONTAL, VERTICAL):
        counts.setdefault(ax, 0)
    out = []
    for v in sorted(counts):
        K = counts[v]
        if n * n > limit * (K + n):
            continue
        pc = projection_count(P, v)
        if pc <= limit:
            out.append(BadDirection(v, pc, K))
    total = sum(b.pair_count for b in out)
    if total > n * (n - 1):
        raise AssertionError(f"pair double count {total} exceeds n(n-1) = {n * (n - 1)}")
    return out


def bad_directions_to_csv(rows: Sequence[BadDirection]) -> str:
    buf = io.StringIO()
    buf.write("slope,projection_count,pair_count\n")
    for r in rows:
        buf.write(f"{r.slope.a}/{r.slope.b},{r.projection_count},{r.pair_count}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# incidences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IncidenceReport:
    incidences: int
    n_lines: int
    n_points: int

    @property
    def st_bound(self) -> float:
        L, P = self.n_lines, self.n_points
        return L ** (2 / 3) * P ** (2 / 3) + L + P

    @property
    def ratio(self) -> float:
        b = self.st_bound
        return self.incidences / b if b else 0.0


def st_incidences(L: Iterable[LatticeLine], P, workers=None, chunk: int = 256) -> IncidenceReport:
    """Exact ``|{(l, p) : p on l}|``."""
    lines = list(L)
    P = as_points(P)
    for ln in lines:
        if max(abs(ln.A), abs(ln.B)) >= COORD_LIMIT or abs(ln.C) >= 1 << 62:
            raise OverflowError("line coefficients too large for exact int64 evaluation")
    coef = np.array([(ln.A, ln.B, ln.C) for ln in lines], dtype=np.int64).reshape(-1, 3)

    def block(i0):
        c = coef[i0 : i0 + chunk]
        val = c[:, 0, None] * P[None, :, 0] + c[:, 1, None] * P[None, :, 1]
        return int(np.count_nonzero(val == c[:, 2, None]))

    total = sum(ordered_map(block, range(0, coef.shape[0], chunk), workers))
    return IncidenceReport(total, len(lines), P.shape[0])


def st_incidences_bruteforce(L: Iterable[LatticeLine], P) -> int:
    pts = [(int(x), int(y)) for x, y in as_points(P)]
    return sum(1 for ln in L for p in pts if ln.A * p[0] + ln.B * p[1] == ln.C)


# ---------------------------------------------------------------------------
# rich lines
# ---------------------------------------------------------------------------


def line_table(P, v: Slope) -> Dict[LatticeLine, int]:
    """Point count of every line with slope v meeting P."""
    P = as_points(P)
    keys, idx, counts = np.unique(line_keys(P, v), return_index=True, return_counts=True)
    return {LatticeLine.with_slope(v, P[i]): int(c) for i, c in zip(idx, counts)}


def heaviest_line(P) -> Tuple[Optional[LatticeLine], int]:
    """Line through the most points of P; ties go to the smallest normalised triple."""
    P = as_points(P)
    n = P.shape[0]
    if n == 0:
        return None, 0
    if n == 1:
        return LatticeLine.with_slope(HORIZONTAL, P[0]), 1
    i, j = np.triu_indices(n, 1)
    sl = canonical_slopes(P[i] - P[j])
    key = sl[:, 1] * P[i, 0] - sl[:, 0] * P[i, 1]
    rows = np.column_stack([sl, key])
    uniq, cnt = np.unique(rows, axis=0, return_counts=True)
    # c points on a line give c(c-1)/2 unordered pairs
    top = int(cnt.max())
    best = (1 + math.isqrt(1 + 8 * top)) // 2
    cands = [LatticeLine(int(b), int(-a), int(k)) for (a, b, k), c in zip(uniq, cnt) if c == top]
    return min(cands), int(best)


def line_count(P, line: LatticeLine) -> int:
    P = as_points(P)
    return int(np.count_nonzero(line.A * P[:, 0] + line.B * P[:, 1] == line.C))


def _level(x: int) -> int:
    return int(x).bit_length() - 1


@dataclass
class RichLineResult:
    line: LatticeLine
    count: int
    trace: List[str] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)
    mode: str = "pigeonhole"  # or "oracle"
    j: Optional[int] = None
    k: Optional[int] = None

    def trace_text(self) -> str:
        return "\n".join(self.trace) + "\n"


def rich_line_search(P, G, s: float, c_st: float = 1.0, C: float = 1.0) -> RichLineResult:
    """Dyadic pigeonholing over pair levels and line levels, as an algorithm.

    Slopes are grouped into levels E_j by their pair count; a level j is
    accepted when ``|E_j| >= c_st n^(1+s) / (2^j j^2)`` and
    ``2^j >= C n^(2-s) log^12 n``.  For each slope of E_j the lines are
    grouped into levels L_{e,k} by point count, a common k is chosen for the
    most slopes, and the heaviest line found is returned.  When no level
    passes both gates the brute-force heaviest line is returned instead.
    """
    P = as_points(P)
    n = P.shape[0]
    G = _check_pairs(G, n)
    logn = math.log2(n) if n > 1 else 1.0
    trace = [f"n={n} |G|={G.shape[0]} s={s} c_st={c_st} C={C}"]
    flags = []
    if G.shape[0] < n ** (1 + s):
        flags.append(f"|G| = {G.shape[0]} below n^(1+s) = {n ** (1 + s):.6g}")
    counts = slope_pair_counts(P, G)
    if not counts:
        line, c = heaviest_line(P)
        flags.append("G is empty")
        return RichLineResult(line, c, trace, flags, mode="oracle")

    levels: Dict[int, List[Slope]] = {}
    for v in sorted(counts):
        levels.setdefault(_level(counts[v]), []).append(v)
    total = 0
    feasible, relaxed = [], []
    for j in sorted(levels):
        Ej = levels[j]
        mass = sum(counts[v] for v in Ej)
        total += mass
        # each slope in E_j carries between 2^j and 2^(j+1) pairs
        assert all((1 << j) <= counts[v] < (1 << (j + 1)) for v in Ej)
        need3 = c_st * n ** (1 + s) / ((1 << j) * max(j, 1) ** 2)
        need4 = C * n ** (2 - s) * logn**12
        ok3, ok4 = len(Ej) >= need3, (1 << j) >= need4
        trace.append(
            f"level j={j} |E_j|={len(Ej)} pairs={mass} gate_size={need3:.6g}:{'ok' if ok3 else 'no'} "
            f"gate_large={need4:.6g}:{'ok' if ok4 else 'no'}"
        )
        if ok3 and ok4:
            feasible.append(j)
        if ok3:
            relaxed.append(j)
    assert total == G.shape[0]
    if feasible:
        j = max(feasible)
    else:
        flags.append("pigeonhole failed at this scale: no level j passes both gates")
        # keep exercising the structure on the best level available
        j = max(relaxed) if relaxed else max(levels, key=lambda q: (sum(counts[v] for v in levels[q]), q))
    trace.append(f"chosen j={j}")

    per_slope = []
    for v in levels[j]:
        table = line_table(P, v)
        by_k: Dict[int, List[Tuple[LatticeLine, int]]] = {}
        for ln, c in table.items():
            if c >= 2:
                by_k.setdefault(_level(c), []).append((ln, c))
        good = []
        for k in sorted(by_k):
            Lk = by_k[k]
            # a line with 2^k points: at most n / 2^k such lines are disjoint
            assert len(Lk) * (1 << k) <= n
            need5 = c_st * (1 << j) / ((1 << (2 * k)) * max(k, 1) ** 2)
            need6 = (1 << j) / n
            if len(Lk) >= need5 and (1 << k) >= need6:
                good.append(k)
        k_e = max(good) if good else (max(by_k) if by_k else None)
        if not good:
            flags.append(f"slope {v.a}/{v.b}: no line level passes both gates")
        per_slope.append((v, k_e, by_k))
        trace.append(f"  slope {v.a}/{v.b} levels={{{', '.join(f'{k}:{len(by_k[k])}' for k in sorted(by_k))}}} k_e={k_e}")

    ks = [k for _, k, _ in per_slope if k is not None]
    if not ks:
        line, c = heaviest_line(P)
        flags.append("no slope in E_j has a line with two points")
        return RichLineResult(line, c, trace, flags, mode="oracle", j=j)
    tally: Dict[int, int] = {}
    for k in ks:
        tally[k] = tally.get(k, 0) + 1
    k = max(tally, key=lambda q: (tally[q], q))
    E_prime = [(v, by_k) for v, kk, by_k in per_slope if kk == k]
    frac_need = len(levels[j]) / (logn + 1)
    if len(E_prime) < frac_need:
        raise AssertionError("common-k pigeonhole lost more than a 1/log n fraction")
    trace.append(f"common k={k} |E'_j|={len(E_prime)} of {len(levels[j])}")
    best_line, best_c = None, -1
    for v, by_k in E_prime:
        for ln, c in by_k[k]:
            if c > best_c or (c == best_c and ln < best_line):
                best_line, best_c = ln, c
    if line_count(P, best_line) != best_c:
        raise AssertionError("recount of the chosen line disagrees")
    target = n**s / logn**4
    trace.append(f"pigeonhole line {best_line.A},{best_line.B},{best_line.C} count={best_c} n^s/log^4 n={target:.6g}")
    if feasible:
        return RichLineResult(best_line, best_c, trace, flags, "pigeonhole", j, k)
    line, c = heaviest_line(P)
    trace.append(f"oracle line {line.A},{line.B},{line.C} count={c}")
    return RichLineResult(line, c, trace, flags, "oracle", j, k)


# ---------------------------------------------------------------------------
# sharpness examples
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LatticeExample:
    P: np.ndarray
    G: np.ndarray
    slopes: tuple
    params: dict

    @property
    def n_pairs(self) -> int:
        return int(self.G.shape[0])

    @property
    def n_slopes(self) -> int:
        return len(self.slopes)


def grid_radius_slopes(side: int, r2: float) -> List[Slope]:
    """Slopes spanned by pairs of grid points p with ``|p|^2 <= r2``."""
    pts = [(x, y) for x in range(side) for y in range(side) if x * x + y * y <= r2 + 1e-9]
    out = set()
    for p in pts:
        for q in pts:
            if p != q:
                out.add(Slope.of(p, q))
    return sorted(out)


def gen_grid_example(n: int, s: float) -> LatticeExample:
    """Grid ``{0..sqrt(n)-1}^2`` with all pairs whose slope is spanned near the origin."""
    side = math.isqrt(n)
    if side * side != n or n < 4:
        raise ValueError(f"n must be a perfect square >= 4, got {n}")
    if not 0.5 <= s < 1:
        raise ValueError(f"s must lie in [1/2, 1), got {s}")
    r2 = float(n) ** (2 * s - 1)
    S = grid_radius_slopes(side, r2)
    xs, ys = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    P = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.int64)
    pairs = all_pairs(n)
    sl = canonical_slopes(P[pairs[:, 0]] - P[pairs[:, 1]])
    wanted = np.array([(v.a, v.b) for v in S], dtype=np.int64)
    code = sl[:, 0] * (4 * side) + sl[:, 1]
    keep = np.isin(code, wanted[:, 0] * (4 * side) + wanted[:, 1])
    return LatticeExample(P, pairs[keep], tuple(S), {"n": n, "s": s, "r": math.sqrt(r2)})


def gen_parallel_lines_example(n: int, s: float) -> LatticeExample:
    """``k = ceil(n^(1-s))`` horizontal lines with ``ceil(n/k)`` points each."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0.5 < s < 1:
        raise ValueError(f"s must lie in (1/2, 1), got {s}")
    k = _ceil_power(n, 1 - s)
    per = -(-n // k)
    xs, ys = np.meshgrid(np.arange(per), np.arange(k), indexing="ij")
    P = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.int64)
    P = P[np.lexsort((P[:, 0], P[:, 1]))]
    i, j = np.nonzero((P[:, None, 1] == P[None, :, 1]) & ~np.eye(P.shape[0], dtype=bool))
    G = np.column_stack([i, j]).astype(np.int64)
    return LatticeExample(P, G, (HORIZONTAL,), {"n": n, "s": s, "k": k, "per_line": per})


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------


def dumps_lattice(P, G=None) -> str:
    P = as_points(P)
    buf = io.StringIO()
    buf.write(f"# lattice points={P.shape[0]}\n[points]\n")
    for x, y in P:
        buf.write(f"{x} {y}\n")
    if G is not None:
        G = np.asarray(G, dtype=np.int64).reshape(-1, 2)
        buf.write("[pairs]\n")
        for i, j in G:
            buf.write(f"{i} {j}\n")
    return buf.getvalue()


def loads_lattice(text: str) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    section = None
    pts: List[Tuple[int, int]] = []
    pairs: List[Tuple[int, int]] = []
    saw_pairs = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("[points]", "[pairs]"):
            section = line
            saw_pairs |= line == "[pairs]"
            continue
        a, b = line.split()
        (pts if section == "[points]" else pairs).append((int(a), int(b)))
    P = np.array(pts, dtype=np.int64).reshape(-1, 2)
    G = np.array(pairs, dtype=np.int64).reshape(-1, 2) if saw_pairs else None
    if G is not None:
        _check_pairs(G, P.shape[0])
    return P, G
