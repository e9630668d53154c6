"""The two lattice examples: many slopes with few pairs each, one slope with many.

Run with ``python3 demos/lattice_examples.py``.
"""

from __future__ import annotations

from fanproj import lattice

grid = lattice.gen_grid_example(1024, 0.75)
print(f"grid: n = 1024, r = {grid.params['r']:.2f}, |S(G)| = {grid.n_slopes}, |G| = {grid.n_pairs}")
counts = sorted(lattice.kaufman_pair_count(grid.P, v) for v in grid.slopes)
print(f"  pairs collapsed per slope: min {counts[0]}, max {counts[-1]}")
bad = lattice.bad_directions(grid.P, 0.5, 2)
print(f"  slopes projecting the grid to <= 2 sqrt(n) values: {[f'{b.slope.a}/{b.slope.b}' for b in bad]}")

par = lattice.gen_parallel_lines_example(1024, 0.7)
print(f"parallel: k = {par.params['k']} lines x {par.params['per_line']} points, |G| = {par.n_pairs}")
res = lattice.rich_line_search(par.P, par.G, 0.7)
print(f"  rich line {res.line} with {res.count} points, mode {res.mode}")
for f in res.flags:
    print("  flag:", f)
print("  trace:")
for line in res.trace[:6]:
    print("   ", line)
