"""Small sums A + tA for an arithmetic progression, large ones for generic t.

Run with ``python3 demos/sumset_sweep.py [m]``.
"""

from __future__ import annotations

import math
import sys

import numpy as np

from fanproj.projections import exceptional_parameters, sumset_entropy
from fanproj.sets import Scale, covering_number, gen_ap_set, gen_random_ds_set

m = int(sys.argv[1]) if len(sys.argv) > 1 else 12
scale = Scale(m)
ap = gen_ap_set(scale, 0.5)
rnd = gen_random_ds_set(scale, 0.5, seed=1)
print(f"m = {m}, delta = 2^-{m}")
print(f"|AP| cells = {covering_number(ap)}, |random| cells = {covering_number(rnd)}")

# a few parameters by hand
for t in (0.0, 1.0, math.sqrt(scale.delta), 1 / 3):
    print(f"  t = {t:<10.6g} N(AP + tAP) = {sumset_entropy(ap, t):6d}   N(R + tR) = {sumset_entropy(rnd, t):6d}")

# the full sweep over a dyadic grid of t, counting parameters with a small sumset
T = np.arange(2**8 + 1) / 2**8
for name, A in (("AP", ap), ("random", rnd)):
    res = exceptional_parameters(A, scale, 0.55, 4.0, T=T)
    print(f"{name}: {len(res.exceptional)} of {len(T)} parameters have N(A + tA) <= 4 delta^-0.55")
    print("   first few:", res.exceptional[:6])
