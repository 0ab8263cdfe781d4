"""Big/small block geometry and the rate exponents it supports.

Prints the decomposition of one dyadic level, the share of time spent in
gaps as levels grow, and the rate table for a few moment exponents.

Run with ``python3 demos/block_geometry.py``.
"""

from quenched_asip import blocks as blk
from quenched_asip import simulate as sim

dec = blk.build_blocks(4, 0.5, 0.2)
print("level 4, beta=0.5, eps=0.2")
for iv in dec.intervals:
    print(f"  {iv.kind}_{iv.j}: [{iv.start}, {iv.end})")

beta, eps = 0.625, 0.05
print(f"\ngap census for beta={beta}, eps={eps}")
print(f"{'N':>3} {'gap integers':>13} {'fraction':>9} {'count / bound':>14}")
for N in range(6, 21, 2):
    c = blk.gap_census(N, beta, eps)
    print(f"{N:>3} {c.count:>13} {c.count / 2 ** (N + 1):>9.4f} {c.ratio:>14.3f}")
print("levels without room for big blocks:", c.invalid_levels)

print("\nrate table")
for row in sim.rate_table([4.5, 5, 8, 20, 100]):
    print(f"  p={row['p']:>6g}  a_p={row['a_p']:.4f}  beta={row['beta']:.4f}")
