import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import planted_fan
from fanproj.projections import Direction, DirectionSet, angle_grid
from fanproj.sets import PointSet2D, Scale, gen_ap_set, gen_figure3_set, product_set
from fanproj.tubes import (
    FanParams,
    NoFan,
    Tube,
    count_related_pairs,
    fan_from_record,
    fan_masses,
    fan_to_record,
    find_fan,
    gen_planted_fan,
    prune_bad_tubes,
    prune_family,
    riesz_sum,
    select_E0,
    tube_energy,
    tube_family,
    tube_index,
)

# --- params ---------------------------------------------------------------------


def test_params_defaults():
    p = FanParams(s=0.55, sigma=0.5)
    assert p.tau == pytest.approx(2 * 0.05 / 0.45)
    assert p.kappa == pytest.approx(max(p.tau, 2 * 0.05))
    sc = Scale(10)
    assert p.D(sc) == pytest.approx(4**1.5 * math.sqrt(10) * sc.power(-0.025))
    assert p.energy_unit(sc) == pytest.approx(sc.power(-0.95) * 10)
    assert p.tube_budget(sc) == math.ceil(4 * sc.power(-0.55))


@pytest.mark.parametrize(
    "kw",
    [
        dict(s=0.6, sigma=0.5),
        dict(s=0.45, sigma=0.4),
        dict(s=0.55, sigma=0.55),
        dict(s=0.55, sigma=0.5, tau=0.1),
    ],
)
def test_params_validation(kw):
    with pytest.raises(ValueError):
        FanParams(**kw)


def test_params_accept_half():
    FanParams(s=0.5, sigma=0.4)


# --- tube indexing ------------------------------------------------------------------


def test_tube_index_examples():
    sc = Scale(3)
    assert tube_index((0.3, 0.9), Direction(0), sc) == 1
    assert tube_index((2 * sc.delta, 0.4), Direction(0), sc) == 1
    assert tube_index((2 * sc.delta - 1e-12, 0.4), Direction(0), sc) == 0


def test_tube_membership_oracle():
    rng = np.random.default_rng(0)
    sc = Scale(6)
    pts = rng.uniform(0, 2, (1000, 2))
    for th in rng.uniform(0, 2 * math.pi, 5):
        e = Direction(th)
        idx = tube_index(pts, e, sc)
        for n in np.unique(idx)[:10]:
            T = Tube(e, int(n), sc)
            w = pts @ e.unit - T.center_offset
            oracle = (w >= -sc.delta) & (w < sc.delta)
            assert np.array_equal(T.contains(pts), oracle)
            assert T.width == 2 * sc.delta


def test_tubes_partition_points():
    rng = np.random.default_rng(1)
    sc = Scale(7)
    pts = rng.uniform(0, 2, (500, 2))
    e = Direction(0.7)
    idx = tube_index(pts, e, sc)
    hits = sum(Tube(e, int(n), sc).contains(pts).astype(int) for n in np.unique(idx))
    assert np.all(hits == 1)


# --- energies -------------------------------------------------------------------------


def test_tube_energy_two_points():
    sc = Scale(8)
    pts = np.array([[0.5, 0.1], [0.5, 0.4]])
    T = Tube(Direction(0), tube_index(pts[0], Direction(0), sc), sc)
    te = tube_energy(pts, T, 0.5)
    assert te.value == pytest.approx(2 * 0.3**-0.5)
    assert te.point_count == 2


def test_tube_energy_singleton_zero():
    sc = Scale(8)
    T = Tube(Direction(0), tube_index((0.5, 0.1), Direction(0), sc), sc)
    assert tube_energy(np.array([[0.5, 0.1]]), T, 0.5).value == 0


def test_tube_energy_oracle():
    rng = np.random.default_rng(4)
    sc = Scale(6)
    e = Direction(0.3)
    # 50 points inside one tube: random position along the tube, random offset across
    v = np.array([-e.unit[1], e.unit[0]])
    c = Tube(e, 20, sc).center_offset
    pts = c * e.unit + rng.uniform(0.1, 1.0, 50)[:, None] * v + rng.uniform(-0.9, 0.9, 50)[:, None] * sc.delta * e.unit
    T = Tube(e, 20, sc)
    assert T.contains(pts).all()
    s = 0.55
    naive = 0.0
    for i in range(50):
        for j in range(50):
            if i != j:
                naive += math.dist(pts[i], pts[j]) ** (s - 1)
    assert tube_energy(pts, T, s).value == pytest.approx(naive, rel=1e-9)


def test_energy_rejects_coincident_points():
    sc = Scale(6)
    pts = np.array([[0.5, 0.5], [0.5, 0.5]])
    T = Tube(Direction(0), tube_index(pts[0], Direction(0), sc), sc)
    with pytest.raises(ValueError):
        tube_energy(pts, T, 0.5)
    with pytest.raises(ValueError):
        riesz_sum(pts)


def test_energy_exponent_range():
    sc = Scale(6)
    with pytest.raises(ValueError):
        tube_energy(np.array([[0.5, 0.5]]), Tube(Direction(0), 0, sc), 1.0)


def test_riesz_two_points():
    assert riesz_sum(np.array([[0.0, 0.0], [0.5, 0.0]])) == 4.0


def test_riesz_ap_product_bound():
    sc = Scale(10)
    A = gen_ap_set(sc, 0.5)
    assert riesz_sum(product_set(A, A)) <= 32 * sc.power(-2) * 10


def test_riesz_homogeneity_exact():
    A = gen_ap_set(Scale(8), 0.5)
    B = product_set(A, A).points
    assert riesz_sum(B / 2) == 2 * riesz_sum(B)


def test_riesz_worker_independent():
    rng = np.random.default_rng(3)
    B = rng.uniform(0, 2, (1500, 2))
    vals = {riesz_sum(B, workers=w, chunk=128) for w in (1, 3, 8)}
    assert len(vals) == 1


# --- E0 selection and pruning --------------------------------------------------------


def test_select_E0_discards_line():
    sc = Scale(10)
    B = np.column_stack([np.arange(400) * sc.delta * 2, np.full(400, 0.5)])
    E = DirectionSet.from_angles([math.pi / 2], sc)
    sel = select_E0(B, E, sc, FanParams(s=0.55, sigma=0.5))
    assert len(sel.directions) == 0
    assert any("every direction discarded" in f for f in sel.flags)


def test_select_E0_ap_product_keeps_half():
    sc = Scale(10)
    A = gen_ap_set(sc, 0.5)
    E = angle_grid(sc, 0.55)
    sel = select_E0(product_set(A, A), E, sc, FanParams(s=0.55, sigma=0.5))
    assert len(sel.directions) >= len(E) / 2
    assert sel.markov_applies


def test_select_E0_empty():
    sc = Scale(8)
    with pytest.raises(ValueError):
        select_E0(np.zeros((1, 2)), DirectionSet((), sc), sc, FanParams(s=0.55, sigma=0.5))


def test_prune_all_below_threshold():
    sc = Scale(10)
    A = gen_ap_set(sc, 0.5)
    B = product_set(A, A)
    pr = prune_bad_tubes(B, Direction(0.4), FanParams(s=0.55, sigma=0.5), sc)
    fam = pr.family
    assert np.array_equal(fam.survivors, fam.counts >= 2)
    assert pr.flags == () or all("single-point" in f for f in pr.flags)


def test_prune_single_heavy_tube():
    sc = Scale(10)
    B = np.column_stack([np.full(1024, 0.5), np.arange(1024) * sc.delta])
    params = FanParams(s=0.55, sigma=0.5)
    pr = prune_bad_tubes(B, Direction(0), params, sc)
    assert pr.family.energies[0] >= pr.threshold
    assert not pr.family.survivors.any()
    assert pr.coverage_ratio == 0
    assert any("coverage ratio" in f for f in pr.flags)


def test_prune_ap_product_coverage():
    sc = Scale(10)
    A = gen_ap_set(sc, 0.5)
    B = product_set(A, A)
    params = FanParams(s=0.55, sigma=0.5)
    for e in angle_grid(sc, 0.55):
        assert prune_bad_tubes(B, e, params, sc).coverage_ratio >= 0.9


def _families(B, E, sc, params):
    budget = params.tube_budget(sc)
    return [prune_family(tube_family(B, e, sc, params.s, budget), params, sc).family for e in E]


def test_related_pairs_small_examples():
    sc = Scale(8)
    params = FanParams(s=0.55, sigma=0.5)
    two = np.array([[0.5, 0.1], [0.5, 0.6]])
    assert count_related_pairs(_families(two, [Direction(0)], sc, params)) == 2
    K = 7
    line = np.column_stack([np.full(K, 0.5), np.linspace(0.1, 0.9, K)])
    assert count_related_pairs(_families(line, [Direction(0)], sc, params)) == K * (K - 1)


def test_related_pairs_oracle():
    rng = np.random.default_rng(8)
    sc = Scale(6)
    params = FanParams(s=0.55, sigma=0.5)
    B = np.unique(rng.integers(0, 128, (120, 2)), axis=0) / 64.0
    E = angle_grid(sc, 0.55)
    fams = _families(B, E, sc, params)
    brute = 0
    for f in fams:
        alive = f.surviving_points()
        for i in range(len(B)):
            for j in range(len(B)):
                if i != j and alive[i] and f.point_tube[i] == f.point_tube[j]:
                    brute += 1
    assert count_related_pairs(fams) == brute


@given(st.integers(0, 2**32))
def test_geometric_pair_bound(seed):
    rng = np.random.default_rng(seed)
    sc = Scale(10)
    s = 0.55
    E = angle_grid(sc, s, 0, math.pi)
    b, b2 = rng.uniform(0, 2, 2), rng.uniform(0, 2, 2)
    d = math.dist(b, b2)
    if d < sc.delta:
        return
    pts = np.array([b, b2])
    count = sum(int(tube_index(pts[0], e, sc) == tube_index(pts[1], e, sc)) for e in E)
    bound = 2 * (2 * math.asin(min(1.0, 2 * sc.delta / d)) / sc.power(s) + 1)
    assert count <= bound


# --- fans ---------------------------------------------------------------------------


def test_planted_fan_recovered():
    for seed in range(4):
        pf, params, fan = planted_fan(m=10, seed=seed, quadrant=seed)
        assert fan.found and fan.apex == pf.apex
        assert fan.mass >= pf.planted_mass
        assert fan.recount() == fan.mass


def test_fan_tubes_contain_apex():
    pf, params, fan = planted_fan(m=10, seed=3)
    for t in fan.tubes:
        assert tube_index(fan.apex_point, t.direction, fan.scale) == t.index
    assert len(fan.directions) == len(fan.tubes) <= len(pf.directions)


def test_fan_masses_oracle():
    sc = Scale(7)
    pf = gen_planted_fan(sc, 6, 8, seed=2)
    params = FanParams(s=0.55, sigma=0.5)
    fams = _families(pf.points, pf.directions, sc, params)
    B = pf.points.points
    masses = fan_masses(B, fams)
    for b in range(len(B)):
        G = np.zeros(len(B), dtype=bool)
        for f in fams:
            alive = f.surviving_points()
            if alive[b]:
                G |= f.point_tube == f.point_tube[b]
        assert masses[b] == G.sum()


def test_collinear_fan_is_everything():
    sc = Scale(8)
    B = np.column_stack([np.full(20, 0.5), 0.05 + 0.04 * np.arange(20)])
    params = FanParams(s=0.55, sigma=0.5, c_fan=1e-3)
    fan = find_fan(B, _families(B, [Direction(0)], sc, params), params, sc)
    assert fan.found and fan.mass == 20
    assert fan.apex == 0  # lexicographically smallest among equal masses


def test_figure3_has_no_fan():
    sc = Scale(12)
    params = FanParams(s=0.55, sigma=0.53)
    B = gen_figure3_set(sc)
    res = find_fan(B, _families(B, angle_grid(sc, 0.55), sc, params), params, sc)
    assert isinstance(res, NoFan)
    assert res.best_mass < res.threshold


def test_fan_record_roundtrip():
    pf, params, fan = planted_fan(m=10, seed=1)
    text = fan_to_record(fan)
    assert text.startswith("[fan]\n")
    back = fan_from_record(text, pf.points)
    assert back.apex == fan.apex and back.mass == fan.mass
    assert [t.index for t in back.tubes] == [t.index for t in fan.tubes]


def test_fan_record_detects_mismatch():
    pf, params, fan = planted_fan(m=10, seed=1)
    text = fan_to_record(fan).replace(f"member_count={fan.mass}", f"member_count={fan.mass + 1}")
    with pytest.raises(ValueError):
        fan_from_record(text, pf.points)


def test_planted_generator_deterministic_and_separated():
    from fanproj.sets import is_delta_separated

    sc = Scale(10)
    a = gen_planted_fan(sc, 32, 12, seed=9)
    b = gen_planted_fan(sc, 32, 12, seed=9)
    assert a.points == b.points
    assert isinstance(a.points, PointSet2D)
    assert is_delta_separated(a.points)
