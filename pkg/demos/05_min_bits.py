"""How many ADC bits does a receiver need to see the reflected uplink path?

Targets are dropped at random around the base station. For each drop we
compute the power ratio between the direct and the reflected uplink path
and the smallest resolution whose dynamic range covers it.
"""
from itertools import groupby

from qhrf import min_bits_scan

rows = min_bits_scan(n_placements=200, seed=0)
print("bits  placements  DR_sig range (dB)")
for bits, grp in groupby(rows, key=lambda r: r.min_bits):
    grp = list(grp)
    print(f"{bits:>4}  {len(grp):>10}  {grp[0].dr_sig_db:6.1f} .. {grp[-1].dr_sig_db:6.1f}")
