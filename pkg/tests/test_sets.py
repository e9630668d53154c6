import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fanproj.sets import (
    PointSet1D,
    PointSet2D,
    Scale,
    covering_number,
    dumps_points,
    extract_ds_subset,
    gen_ap_set,
    gen_cantor_set,
    gen_figure3_set,
    gen_random_ds_set,
    is_delta_separated,
    loads_points,
    nonconcentration,
    product_set,
)


def bucket_oracle(values, delta):
    return len({math.floor(v / delta) for v in sorted(values)})


def noncon_oracle_1d(pts, m, s):
    delta = 2.0**-m
    best = 0.0
    for x in pts:
        for k in range(m + 1):
            r = delta * 2**k
            c = sum(1 for y in pts if abs(y - x) <= r)
            best = max(best, c / (r / delta) ** s)
    return best


# --- Scale ------------------------------------------------------------------


def test_scale_delta_is_exact():
    for m in range(1, 21):
        assert Scale(m).delta == 2.0**-m
        assert Scale(m).power(1) == Scale(m).delta


@pytest.mark.parametrize("m", [0, 21, -3])
def test_scale_range(m):
    with pytest.raises(ValueError):
        Scale(m)


def test_scale_rejects_float():
    with pytest.raises(TypeError):
        Scale(3.0)


# --- point sets ----------------------------------------------------------------


def test_pointset1d_must_be_sorted():
    with pytest.raises(ValueError):
        PointSet1D([0.5, 0.2], Scale(4))
    with pytest.raises(ValueError):
        PointSet1D([0.2, 0.2], Scale(4))
    assert len(PointSet1D.from_unsorted([0.5, 0.2, 0.5], Scale(4))) == 2


def test_pointset_bounds():
    with pytest.raises(ValueError):
        PointSet1D([1.5], Scale(4))
    with pytest.raises(ValueError):
        PointSet2D([[0.1, 2.5]], Scale(4))


def test_points_are_read_only():
    A = gen_ap_set(Scale(4), 0.5)
    with pytest.raises(ValueError):
        A.points[0] = 0.3


# --- covering numbers -------------------------------------------------------------


def test_covering_singleton():
    assert covering_number(PointSet1D([0.5], Scale(7))) == 1


def test_covering_full_grid():
    m = 6
    grid = PointSet1D(np.arange(2**m + 1) / 2**m, Scale(m))
    assert covering_number(grid) == 2**m + 1


def test_covering_empty():
    assert covering_number(PointSet1D([], Scale(4))) == 0


def test_covering_random_matches_oracle():
    rng = np.random.default_rng(5)
    vals = np.unique(rng.uniform(0, 1, 200))
    assert covering_number(PointSet1D(vals, Scale(5))) == bucket_oracle(vals, 2**-5)


@pytest.mark.parametrize("m", range(4, 11))
def test_covering_oracle_equivalence_per_scale(m):
    rng = np.random.default_rng(m)
    delta = 2.0**-m
    for _ in range(100):
        vals = np.unique(rng.uniform(0, 1, rng.integers(1, 300)))
        X = PointSet1D(vals, Scale(m))
        n = covering_number(X)
        assert n == bucket_oracle(vals, delta)
        shared = len(vals) != len({math.floor(v / delta) for v in vals})
        assert n <= len(vals)
        assert (n == len(vals)) == (not shared)


def test_covering_2d_matches_oracle():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 2, (500, 2))
    d = 2.0**-4
    oracle = len({(math.floor(x / d), math.floor(y / d)) for x, y in pts})
    assert covering_number(PointSet2D(pts, Scale(4))) == oracle


# --- separation ---------------------------------------------------------------------


def test_separation_examples():
    sc = Scale(6)
    d = sc.delta
    assert is_delta_separated(PointSet1D([0.1, 0.1 + d], sc))
    assert not is_delta_separated(PointSet1D([0.1, 0.1 + d / 2], sc))
    assert is_delta_separated(PointSet1D(np.arange(65) / 64, sc))
    assert is_delta_separated(PointSet1D([], sc))
    assert is_delta_separated(PointSet1D([0.3], sc))


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), min_size=2, max_size=40, unique=True))
def test_separation_2d_oracle(cells):
    sc = Scale(5)
    pts = np.array(cells, dtype=float) / 40.0
    oracle = all(
        (pts[i, 0] - pts[j, 0]) ** 2 + (pts[i, 1] - pts[j, 1]) ** 2 >= sc.delta**2
        for i in range(len(pts))
        for j in range(i + 1, len(pts))
    )
    assert is_delta_separated(PointSet2D(pts, sc)) == oracle


# --- non-concentration -----------------------------------------------------------------


def test_ap_constant_at_most_4():
    for m in (6, 8, 10, 12):
        assert nonconcentration(gen_ap_set(Scale(m), 0.5), s=0.5).constant <= 4


def test_singleton_constant_one():
    for s in (0.3, 0.5, 1.0):
        rep = nonconcentration(PointSet1D([0.5], Scale(8)), s=s)
        assert rep.constant == 1.0
        assert rep.witness == ((0.5,), 2.0**-8, 1)


def test_empty_has_no_witness():
    rep = nonconcentration(PointSet1D([], Scale(8)), s=0.5)
    assert rep.constant == 0 and rep.witness is None


def test_general_factor_documented():
    assert nonconcentration(PointSet1D([0.5], Scale(8)), s=0.5).general_factor == pytest.approx(2 * 2**0.5)


def test_s_out_of_range():
    with pytest.raises(ValueError):
        nonconcentration(PointSet1D([0.5], Scale(8)), s=1.5)


@given(st.lists(st.integers(0, 256), min_size=1, max_size=40, unique=True), st.sampled_from([0.3, 0.5, 0.75, 1.0]))
def test_nonconcentration_oracle_1d(cells, s):
    pts = sorted(c / 256 for c in cells)
    rep = nonconcentration(PointSet1D(pts, Scale(8)), s=s)
    assert rep.constant == pytest.approx(noncon_oracle_1d(pts, 8, s), rel=1e-12)
    assert rep.constant >= 1


def test_nonconcentration_2d_oracle():
    rng = np.random.default_rng(3)
    sc = Scale(5)
    pts = np.unique(rng.integers(0, 40, (60, 2)), axis=0) / 32.0
    rep = nonconcentration(PointSet2D(pts, sc), s=1.0)
    best = 0.0
    for x in pts:
        for k in range(0, 8):
            r = sc.delta * 2**k
            c = np.count_nonzero(((pts - x) ** 2).sum(axis=1) <= r * r)
            best = max(best, c / (r / sc.delta))
    assert rep.constant == pytest.approx(best)


def test_figure3_is_a_one_set():
    assert nonconcentration(gen_figure3_set(Scale(8)), s=1.0).constant <= 8


# --- extraction -----------------------------------------------------------------------


def test_extract_keeps_good_set():
    sc = Scale(8)
    X = gen_cantor_set(sc, 0.5)
    assert nonconcentration(X, s=0.5).constant <= 1
    assert extract_ds_subset(X, s=0.5) == X


def test_extract_from_full_grid():
    for m in (8, 10, 12):
        sc = Scale(m)
        X = PointSet1D(np.arange(2**m + 1) / 2**m, sc)
        P = extract_ds_subset(X, s=0.5)
        assert len(P) >= sc.power(-0.5) / 4
        assert nonconcentration(P, s=0.5).constant <= 4
        assert is_delta_separated(P)
        assert set(P.points) <= set(X.points)


def test_extract_cluster():
    sc = Scale(10)
    X = PointSet1D(0.5 + np.arange(5) * sc.delta / 2, sc)
    assert len(extract_ds_subset(X, s=0.5)) <= 2


def test_extract_empty_raises():
    with pytest.raises(ValueError):
        extract_ds_subset(PointSet1D([], Scale(4)), s=0.5)


@given(st.lists(st.integers(0, 1024), min_size=1, max_size=300, unique=True), st.sampled_from([0.25, 0.5, 0.8, 1.0]))
def test_extract_properties(cells, s):
    sc = Scale(10)
    X = PointSet1D(sorted(c / 1024 for c in cells), sc)
    P = extract_ds_subset(X, s=s)
    assert set(P.points) <= set(X.points)
    assert is_delta_separated(P)
    assert nonconcentration(P, s=s).constant <= 4


# --- generators -----------------------------------------------------------------------


def test_ap_examples():
    A = gen_ap_set(Scale(3), 1.0)
    assert list(A.points) == [k / 8 for k in range(9)]
    B = gen_ap_set(Scale(8), 0.5)
    assert len(B) == 17 and B.points[1] == 1 / 16
    assert nonconcentration(B, s=0.5).constant <= 4
    assert is_delta_separated(gen_ap_set(Scale(11), 0.5))


def test_ap_size_within_factor_two():
    for m in range(4, 15):
        for s in (0.3, 0.5, 0.55, 0.9):
            n = len(gen_ap_set(Scale(m), s))
            target = Scale(m).power(-s)
            assert target / 2 <= n <= 2 * target + 1


def test_cantor_examples():
    A = gen_cantor_set(Scale(8), 0.5, branching=(2, 4))
    assert len(A) == 16
    assert nonconcentration(gen_cantor_set(Scale(8), 0.5), s=0.5).constant <= 8


def test_cantor_unrealisable_names_nearest():
    with pytest.raises(ValueError, match="nearest realisable s"):
        gen_cantor_set(Scale(8), 0.123456)


def test_cantor_bad_branching():
    with pytest.raises(ValueError):
        gen_cantor_set(Scale(8), 0.5, branching=(2, 5))


def test_random_deterministic():
    sc = Scale(10)
    assert gen_random_ds_set(sc, 0.5, 42) == gen_random_ds_set(sc, 0.5, 42)
    assert gen_random_ds_set(sc, 0.5, 2**63 + 5) == gen_random_ds_set(sc, 0.5, 2**63 + 5)
    assert gen_random_ds_set(sc, 0.5, 1) != gen_random_ds_set(sc, 0.5, 2)


@pytest.mark.parametrize("m", [6, 8, 10, 12])
def test_generators_are_ds_sets(m):
    sc = Scale(m)
    for s, X in [
        (0.5, gen_ap_set(sc, 0.5)),
        (0.55, gen_ap_set(sc, 0.55)),
        (0.5, gen_cantor_set(sc, 0.5)),
        (0.75, gen_cantor_set(sc, 0.75)),
        (0.5, gen_random_ds_set(sc, 0.5, m)),
        (0.7, gen_random_ds_set(sc, 0.7, m + 1)),
    ]:
        assert is_delta_separated(X)
        assert nonconcentration(X, s=s).constant <= 8
    F = gen_figure3_set(sc)
    assert is_delta_separated(F)
    assert nonconcentration(F, s=1.0).constant <= 8


def test_figure3_counts_and_projections():
    sc = Scale(8)
    F = gen_figure3_set(sc)
    assert len(F) == 256
    assert len(np.unique(F.points[:, 0])) == 16
    assert covering_number(F.points[:, 0], sc) == 16
    assert covering_number(F.points[:, 1], sc) >= sc.power(-1) / 4


def test_figure3_odd_m():
    with pytest.raises(ValueError):
        gen_figure3_set(Scale(9))


def test_product_examples():
    sc = Scale(8)
    A = gen_ap_set(sc, 0.5)
    C = gen_cantor_set(sc, 0.5)
    assert len(product_set(A, C)) == len(A) * len(C)
    assert nonconcentration(product_set(A, A), s=1.0).constant <= 16
    single = product_set(PointSet1D([0.25], sc), PointSet1D([0.5], sc))
    assert single.points.tolist() == [[0.25, 0.5]]


def test_product_needs_same_scale():
    with pytest.raises(ValueError):
        product_set(gen_ap_set(Scale(4), 0.5), gen_ap_set(Scale(5), 0.5))


# --- text format ------------------------------------------------------------------


@pytest.mark.parametrize(
    "X",
    [
        gen_ap_set(Scale(10), 0.5),
        gen_random_ds_set(Scale(9), 0.6, 3),
        gen_figure3_set(Scale(6)),
        product_set(gen_ap_set(Scale(6), 0.5), gen_cantor_set(Scale(6), 0.5)),
    ],
)
def test_roundtrip_exact(X):
    text = dumps_points(X)
    assert text.startswith(f"# scale={X.scale.m} dim=")
    Y = loads_points(text)
    assert type(Y) is type(X) and Y == X


def test_roundtrip_non_grid_values():
    X = PointSet1D([1 / 3, 0.7], Scale(4))
    assert loads_points(dumps_points(X)) == X


def test_loads_requires_header():
    with pytest.raises(ValueError):
        loads_points("0.5\n")
