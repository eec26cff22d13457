"""Does the grid-search ML estimator reach the CRB?

With an ideal ADC the MSE meets the CRB once the SNR clears the threshold
region. With a 1-bit ADC both curves turn upward at high SNR: the signs of
the samples stop changing and the data no longer pins the angle down.
Pass a trial count on the command line for smoother curves (default 200).
"""
import sys
import warnings

from qhrf import make_experiment, mse_vs_crb_sweep

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 200
warnings.simplefilter("ignore")  # flat-likelihood notices at very high SNR

for bits, snrs in ((None, range(-20, 21, 5)), (1, range(-10, 61, 10))):
    exp = make_experiment(theta_deg=30.0, snr_db=tuple(snrs), bits=bits, trials=trials, refine=True)
    res = mse_vs_crb_sweep(exp)
    print("ideal ADC" if bits is None else f"{bits}-bit ADC")
    print("  SNR dB      MSE         CRB      MSE/CRB")
    for r in res.rows:
        print(f"  {r.snr_db:6.0f}  {r.mse:10.3e}  {r.crb:10.3e}  {r.mse / r.crb:8.2f}")
