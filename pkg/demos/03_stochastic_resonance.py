"""Stochastic resonance: a little noise helps a coarse ADC.

For every resolution the angle CRB has a best SNR; beyond it, less noise
means less dithering of the quantizer and the bound grows again. The ideal
receiver improves monotonically.
"""
import numpy as np

from qhrf import stochastic_resonance_sweep

res = stochastic_resonance_sweep(bits=(1, 2, 3, 4), snr_db=tuple(range(-20, 81, 10)))
labels = {None: "ideal", 1: "1-bit", 2: "2-bit", 3: "3-bit", 4: "4-bit"}
print("SNR dB " + "".join(f"{labels[b]:>12}" for b in res.crb))
for i, s in enumerate(res.snr_db):
    print(f"{s:6.0f} " + "".join(f"{res.crb[b][i]:12.2e}" for b in res.crb))
print()
for b in (1, 2, 3, 4):
    print(f"{labels[b]}: best SNR {res.argmin_snr_db[b]:.0f} dB, "
          f"min CRB {np.min(res.crb[b]):.2e} rad^2")
