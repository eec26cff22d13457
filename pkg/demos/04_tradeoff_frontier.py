"""Sensing versus communication under low-resolution ADCs.

We sweep the uplink rate floor and minimize the target-angle CRB over the
transmit covariances (a semidefinite program). With 1 or 2 bits the
dynamic-range rule drops the weak reflected uplink path, the users cannot
help sensing and the frontier is flat. With 14 bits the reflection is usable
and rate is traded against accuracy.

The sweep runs on the linear (trace) rate surrogate the SDP optimizes; the
log-det rate of the same covariances is shown next to it and need not be
monotone along the sweep.
"""
import warnings

from qhrf import default_scenario, trace_frontier
from qhrf.quantizer import adc_dynamic_range_db
from qhrf.scenario import uplink_dynamic_range_db

sc = default_scenario(bs_power_max_dbm=10.0)
print(f"signal dynamic range {uplink_dynamic_range_db(sc, 0, 0):.1f} dB")
for b in (1, 2, 14):
    print(f"ADC range at {b:>2} bits: {adc_dynamic_range_db(b):.1f} dB")

warnings.simplefilter("ignore")
for b in (1, 2, 14):
    fr = trace_frontier(sc, bits=b, n_points=8)
    print(f"\n{b}-bit frontier (CRB variation {fr.crb_variation():.2%})")
    print("  surrogate    log-det kbps     CRB rad^2   rank-1 gap")
    for p in fr.points:
        print(f"  {p.rate_surrogate:9.3e}  {p.rate_kbps:12.3f}  {p.crb_rad2:12.4e}   {max(p.rank1_gap):.1e}")
