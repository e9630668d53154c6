from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import settings

from fanproj.projections import Direction
from fanproj.sets import Scale
from fanproj.tubes import Fan, FanParams, FanTube, find_fan, gen_planted_fan, prune_family, tube_family, tube_index

settings.register_profile("repo", deadline=None, max_examples=40)
settings.load_profile("repo")


def planted_fan(m=10, n_tubes=None, per_tube=None, seed=0, quadrant=0, noise=0.2, **kw):
    """Planted instance plus the fan extracted from it with default-ish params."""
    scale = Scale(m)
    n_tubes = n_tubes or math.ceil(scale.power(-0.5))
    per_tube = per_tube or math.ceil(scale.power(-0.35))
    pf = gen_planted_fan(scale, n_tubes, per_tube, noise=noise, seed=seed, quadrant=quadrant, **kw)
    params = FanParams(s=0.55, sigma=0.5, C_heavy=1 / 64)
    budget = params.tube_budget(scale)
    fams = [prune_family(tube_family(pf.points, e, scale, params.s, budget), params, scale).family for e in pf.directions]
    return pf, params, find_fan(pf.points, fams, params, scale)


def manual_fan(apex_cells, rays, dists, m=10, jitter=None):
    """A fan whose apex sits on the centre line of every tube.

    ``apex_cells`` is a list of two tube indices used to pin the apex on the
    centre lines of the first two tubes.  Points are placed at
    ``apex + d * ray`` for each ray and distance list.
    """
    scale = Scale(m)
    d = scale.delta
    rays = [np.asarray(r, dtype=float) / np.hypot(*r) for r in rays]
    dirs = [Direction(math.atan2(r[1], r[0]) + math.pi / 2) for r in rays]
    M = np.array([dirs[0].unit, dirs[1].unit])
    c = np.array([(2 * n + 1) * d for n in apex_cells])
    apex = np.linalg.solve(M, c)
    pts = [apex]
    groups = []
    for r, ds in zip(rays, dists):
        idx = []
        for dist in ds:
            pts.append(apex + dist * r)
            idx.append(len(pts) - 1)
        groups.append(idx)
    pts = np.array(pts)
    tubes = []
    for r, e, idx in zip(rays, dirs, groups):
        n = tube_index(apex, e, scale)
        members = np.array([0] + idx)
        assert np.all(tube_index(pts[members], e, scale) == n)
        tubes.append(FanTube(e, n, members))
    return Fan(pts, 0, tuple(tubes), 0.2, 1.0, scale)


@pytest.fixture
def scale10():
    return Scale(10)
