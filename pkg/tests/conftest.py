import math

import numpy as np
import pytest

from qhrf.scenario import ArrayConfig, default_frame, scenario_from_geometry
from qhrf.signal import PrecoderSet, draw_symbols

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def random_scenario(seed, P=2, K=2, n_bs=8, n_user=4, fixed_gains=True):
    """Random placements in a 200 m disc with random Doppler.

    With ``fixed_gains`` the path gains are redrawn at unit order so that no
    term is buried under the direct path (keeps derivative checks meaningful).
    """
    from dataclasses import replace

    rng = np.random.default_rng(seed)
    tgt = [(rng.uniform(30, 200), rng.uniform(-1.2, 1.2)) for _ in range(P)]
    usr = [(rng.uniform(30, 200), rng.uniform(-1.2, 1.2)) for _ in range(K)]
    sc = scenario_from_geometry(
        tgt, usr,
        frame=default_frame(K, dl_count=12, ul_count=8),
        arrays=ArrayConfig(bs_antennas=n_bs, user_antennas=(n_user,) * K),
        doppler_hz=list(rng.uniform(-500, 500, P)),
    )
    if not fixed_gains:
        return sc

    def g():
        return complex(rng.uniform(0.3, 1.0) * np.exp(2j * np.pi * rng.uniform()))

    targets = tuple(replace(t, complex_gain=g()) for t in sc.targets)
    users = tuple(
        replace(u, complex_gain=g(), reflected_paths=tuple(replace(p, complex_gain=0.5 * g()) for p in u.reflected_paths))
        for u in sc.users
    )
    return replace(sc, targets=targets, users=users)


def random_precoders(sc, seed):
    rng = np.random.default_rng(seed)

    def vec(n, power):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        return math.sqrt(power) * v / np.linalg.norm(v)

    f = vec(sc.n_bs, sc.bs_power_max_w)
    fks = [vec(n, sc.user_power_max_w) for n in sc.arrays.user_antennas]
    return PrecoderSet.from_vectors(f, fks)


def at_snr(sc, pre, sy, snr_db):
    """Scenario with the noise set for a per-antenna SNR of ``snr_db``."""
    from qhrf.estimator import sigma2_for_snr
    from qhrf.scenario import build_channels
    from qhrf.signal import synthesize_noiseless

    x = synthesize_noiseless(build_channels(sc), pre, sy)
    return sc.with_noise_variance(sigma2_for_snr(x, snr_db))


@pytest.fixture
def small_case():
    sc = random_scenario(11)
    pre, sy = random_precoders(sc, 12), draw_symbols(sc, 13)
    return at_snr(sc, pre, sy, 0.0), pre, sy


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
