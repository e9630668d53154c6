"""Plant a fan, find it again, and count the separated vector sums it forces.

Run with ``python3 demos/planted_fan.py [m] [seed]``.
"""

from __future__ import annotations

import math
import sys

from fanproj.sets import Scale
from fanproj.solymosi import (
    check_ray_order,
    count_separated_sums,
    prune_heavy_points,
    quartile_filter,
    remove_near_apex,
    select_rich_tubes,
    white_regions,
)
from fanproj.tubes import FanParams, fan_to_record, find_fan, gen_planted_fan, prune_family, tube_family

m = int(sys.argv[1]) if len(sys.argv) > 1 else 10
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
scale = Scale(m)
n_tubes, per_tube = math.ceil(scale.power(-0.5)), math.ceil(scale.power(-0.35))
pf = gen_planted_fan(scale, n_tubes, per_tube, seed=seed)
print(f"planted {n_tubes} rays x {per_tube} points + 20% noise, {len(pf.points)} points total")

params = FanParams(s=0.55, sigma=0.5, C_heavy=1 / 64)
budget = params.tube_budget(scale)
families = [prune_family(tube_family(pf.points, e, scale, params.s, budget), params, scale).family for e in pf.directions]
fan = find_fan(pf.points, families, params, scale)
print(f"fan found: apex {fan.apex} (planted {pf.apex}), mass {fan.mass} vs threshold {fan.threshold:.1f}")
print(fan_to_record(fan).splitlines()[0:4])

fan = remove_near_apex(prune_heavy_points(quartile_filter(fan), params), params)
for note in fan.notes:
    print(f"  {note.stage:<20} {note.status:<5} {note.measured}")
rich = select_rich_tubes(fan, params)
regions = white_regions(fan, rich)
print(f"{len(rich)} rich tubes, {len(regions)} white regions, rays ordered: {check_ray_order(regions)}")

rep = count_separated_sums(fan, rich, params=params)
print(f"distinct delta-cells of (x + y) - b0: {rep.total}  (violations {rep.violations}, max multiplicity {rep.max_multiplicity})")
print(f"so N((A+A) x (A+A)) >= {rep.total} and N(A+A) >= {rep.sumset_lower_bound:.1f}")
