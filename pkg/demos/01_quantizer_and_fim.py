"""How much angle information survives a b-bit ADC?

We design Lloyd-Max quantizers, look at their distortion factor eta, and
compare the angle CRB of one target for the ideal receiver and for b = 1..4
bits on the default desk scenario, with the noise set for 0 dB per-antenna SNR.
"""
import numpy as np

from qhrf import crb_from_fim, default_precoders, default_scenario, design_lloyd_max, draw_symbols, ideal_fim, quantized_fim
from qhrf.estimator import sigma2_for_snr
from qhrf.scenario import build_channels
from qhrf.signal import synthesize_noiseless

print("bits  eta        levels (unit-variance input)")
for b in (1, 2, 3, 4):
    q = design_lloyd_max(b)
    lv = ", ".join(f"{x:+.3f}" for x in q.levels[len(q.levels) // 2:])
    print(f"{b:>4}  {q.eta:.6f}   +/- {lv}")

sc = default_scenario()
pre = default_precoders(sc)
sy = draw_symbols(sc, 0)
x = synthesize_noiseless(build_channels(sc), pre, sy)
sc = sc.with_noise_variance(sigma2_for_snr(x, 0.0))

# the angle of the target is the quantity of interest; the other parameters are
# taken as known (with a single target and user several of them are not
# separately identifiable, so the full FIM is singular here)
which = ["theta_tar[0]"]
base = crb_from_fim(ideal_fim(sc, pre, sy), which, nuisance="known").values[0]
print(f"\nideal ADC   CRB_theta = {base:.3e} rad^2")
for b in (1, 2, 3, 4):
    c = crb_from_fim(quantized_fim(sc, pre, sy, design_lloyd_max(b)), which, nuisance="known").values[0]
    print(f"{b}-bit ADC   CRB_theta = {c:.3e} rad^2   ({10 * np.log10(c / base):+.2f} dB)")
