import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qhrf.scenario import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    FrameConfig,
    NoiseModel,
    TargetState,
    build_channels,
    default_frame,
    default_scenario,
    doppler_phase,
    friis_amplitude,
    radar_amplitude,
    steering_derivative,
    steering_vector,
    subcarrier_phase,
    uplink_dynamic_range_db,
)

from conftest import random_scenario

# lambda / (4 pi d) * 10^((25 + 17) / 20) evaluated by hand for d = 100 m at 24 GHz
FRIIS_100M_GOLDEN = 0.0012514099311259324


def test_steering_examples():
    np.testing.assert_allclose(steering_vector(0.0, 4, 0.5), np.ones(4))
    np.testing.assert_allclose(steering_vector(math.radians(30), 2, 0.5), [1, 1j], atol=1e-15)
    a = steering_vector(math.radians(50), 8, 0.5)
    np.testing.assert_allclose(np.angle(a * np.exp(-1j * 0)), np.angle(np.exp(1j * np.pi * np.arange(8) * math.sin(math.radians(50)))))
    np.testing.assert_allclose(steering_derivative(0.0, 2, 0.5), [0, 1j * np.pi], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-math.radians(89), math.radians(89)), st.integers(1, 16))
def test_steering_unit_modulus_and_derivative(theta, n):
    a = steering_vector(theta, n, 0.5)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-14)
    assert a[0] == 1
    h = 1e-4

    def a_(t):
        return steering_vector(theta + t, n, 0.5)

    fd = (8 * (a_(h) - a_(-h)) - (a_(2 * h) - a_(-2 * h))) / (12 * h)
    d = steering_derivative(theta, n, 0.5)
    assert d[0] == 0
    assert np.linalg.norm(fd - d) <= 1e-8 * max(np.linalg.norm(d), 1e-300) or np.linalg.norm(d) == 0


def test_subcarrier_and_doppler_phase():
    fr = default_frame()
    assert subcarrier_phase(np.array([3]), 0.0, 0, fr)[0] == pytest.approx(1.0)
    tau = 3.7e-7
    assert subcarrier_phase(np.array([0]), tau, 5, fr)[0] == pytest.approx(np.exp(-2j * np.pi * fr.carrier_freq_hz * tau))
    m, v = 7, 3
    want = np.exp(-2j * np.pi * ((m * fr.subcarrier_spacing_hz + fr.carrier_freq_hz) * tau - m * v / fr.samples_per_symbol))
    assert subcarrier_phase(np.array([m]), tau, v, fr)[0] == pytest.approx(want)
    np.testing.assert_allclose(np.abs(subcarrier_phase(np.arange(60), tau, v, fr)), 1.0)
    np.testing.assert_allclose(doppler_phase(0.0, fr), np.ones(fr.num_symbols))


def test_frame_validation_names_overlap():
    with pytest.raises(ValueError, match=r"\[3, 4\]"):
        FrameConfig(dl_subcarriers=(0, 1, 2, 3, 4), ul_subcarriers=((3, 4, 5),))
    with pytest.raises(ValueError):
        FrameConfig(num_symbols=0)
    with pytest.raises(ValueError):
        ArrayConfig(bs_antennas=0)
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    with pytest.raises(ValueError):
        TargetState(aoa_rad=0.1, one_way_delay_s=-1.0)


def test_channels_rank_one_and_zero_doppler():
    sc = random_scenario(3)
    ch = build_channels(sc)
    mats = [*ch.echo, *ch.direct, *(h for hs in ch.reflected for h in hs)]
    for H in mats:
        s = np.linalg.svd(H.reshape(-1, *H.shape[-2:]), compute_uv=False)
        assert np.all(s[:, 1] < 1e-12 * s[:, 0])
    # the direct path has no Doppler, so it is the same for every symbol
    np.testing.assert_array_equal(ch.direct[0][0], ch.direct[0][-1])
    np.testing.assert_allclose(ch.uplink(0), ch.direct[0] + sum(ch.reflected[0]))


def test_echo_matrix_unit_case():
    sc = default_scenario()
    from dataclasses import replace

    t = TargetState(aoa_rad=0.3, one_way_delay_s=0.0, complex_gain=1.0)
    sc = replace(sc, targets=(t,))
    H = build_channels(sc, v=0).echo[0]
    a = steering_vector(0.3, sc.n_bs, 0.5)
    np.testing.assert_allclose(H[0, 0], np.outer(a, a))


def test_pathloss_golden_and_scaling():
    lam = SPEED_OF_LIGHT / 24e9
    assert friis_amplitude(100.0, lam, 25, 17) == pytest.approx(FRIIS_100M_GOLDEN, rel=1e-12)
    assert friis_amplitude(200.0, lam, 25, 17) == pytest.approx(FRIIS_100M_GOLDEN / 2, rel=1e-12)
    r1 = radar_amplitude(50.0, 50.0, lam, 25, 25)
    r2 = radar_amplitude(100.0, 100.0, lam, 25, 25)
    assert (r1 / r2) ** 2 == pytest.approx(16.0)


def test_default_scenario_shape():
    sc = default_scenario()
    assert (sc.n_bs, sc.arrays.user_antennas, sc.frame.num_symbols) == (8, (4,), 14)
    assert len(sc.frame.dl_subcarriers) == 36 and len(sc.frame.ul_subcarriers[0]) == 24
    assert sc.bs_power_max_w == pytest.approx(1.0) and sc.user_power_max_w == pytest.approx(0.1)
    assert sc.sigma2 == pytest.approx(10 ** (-20.4) * 15e3)
    assert uplink_dynamic_range_db(sc, 0, 0) > 0
