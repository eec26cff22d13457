import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qhrf.quantizer import design_lloyd_max, quantize
from qhrf.scenario import ArrayConfig, build_channels, default_frame, scenario_from_geometry
from qhrf.signal import (
    PrecoderSet,
    default_precoders,
    draw_noise,
    draw_received,
    draw_symbols,
    empirical_covariance,
    sample_frame,
    synthesize_noiseless,
)

from conftest import random_precoders, random_scenario


def _hand_expansion(sc, pre, sy):
    """Scalar loops over the signal model, independent of the channel tensors."""
    fr, d = sc.frame, sc.arrays.element_spacing_wavelengths
    T, v, M = fr.symbol_duration_s, fr.sample_index, fr.samples_per_symbol

    def a(theta, n):
        return cmath.exp(2j * math.pi * d * n * math.sin(theta))

    def c(m, tau):
        return cmath.exp(-2j * math.pi * ((m * fr.subcarrier_spacing_hz + fr.carrier_freq_hz) * tau - m * v / M))

    L, N = fr.num_symbols, sc.n_bs
    x = np.zeros((L, N), dtype=complex)
    f = pre.bs_precoder
    for l in range(L):
        for n in range(N):
            s = 0
            for t in sc.targets:
                at_f = sum(a(t.aoa_rad, p) * f[p] for p in range(N))
                dop = cmath.exp(2j * math.pi * t.doppler_hz * l * T)
                for i, m in enumerate(fr.dl_subcarriers):
                    s += sy.dl[l, i] * t.complex_gain * dop * c(m, 2 * t.one_way_delay_s) * a(t.aoa_rad, n) * at_f
            for k, u in enumerate(sc.users):
                fk = pre.user_precoders[k]
                Nk = len(fk)
                au_f = sum(a(u.aod_rad, p) * fk[p] for p in range(Nk))
                for i, m in enumerate(fr.ul_subcarriers[k]):
                    s += sy.ul[k][l, i] * u.complex_gain * c(m, u.delay_s) * a(u.aoa_at_bs_rad, n) * au_f
                for pth in u.reflected_paths:
                    tg = sc.targets[pth.target_index]
                    dop = cmath.exp(2j * math.pi * tg.doppler_hz * l * T)
                    ar_f = sum(a(pth.aod_to_target_rad, p) * fk[p] for p in range(Nk))
                    for i, m in enumerate(fr.ul_subcarriers[k]):
                        s += sy.ul[k][l, i] * pth.complex_gain * dop * c(m, pth.delay_s) * a(tg.aoa_rad, n) * ar_f
            x[l, n] = s
    return x


def test_matches_hand_expansion_two_antennas():
    sc = scenario_from_geometry(
        [(80.0, 0.4)], [(120.0, -0.5)],
        frame=default_frame(1, dl_count=4, ul_count=3, num_symbols=3),
        arrays=ArrayConfig(bs_antennas=2, user_antennas=(2,)),
        doppler_hz=[300.0],
    )
    pre = random_precoders(sc, 1)
    sy = draw_symbols(sc, 2)
    x = synthesize_noiseless(build_channels(sc), pre, sy)
    ref = _hand_expansion(sc, pre, sy)
    np.testing.assert_allclose(x, ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


def test_zero_precoders_and_no_users():
    sc = random_scenario(4)
    sy = draw_symbols(sc, 0)
    zero = PrecoderSet.from_vectors(np.zeros(sc.n_bs), [np.zeros(n) for n in sc.arrays.user_antennas])
    assert np.all(synthesize_noiseless(build_channels(sc), zero, sy) == 0)
    # users silent: only the echo is left, and it matches the echo-only sum
    pre = random_precoders(sc, 5)
    silent = PrecoderSet.from_vectors(pre.bs_precoder, [np.zeros(n) for n in sc.arrays.user_antennas])
    ch = build_channels(sc)
    echo = sum(np.einsum("lm,lmnp,p->ln", sy.dl, h, pre.bs_precoder) for h in ch.echo)
    np.testing.assert_allclose(synthesize_noiseless(ch, silent, sy), echo)


def test_dimension_mismatch_raises():
    sc = random_scenario(4)
    sy = draw_symbols(sc, 0)
    bad = PrecoderSet.from_vectors(np.ones(3), [np.ones(n) for n in sc.arrays.user_antennas])
    with pytest.raises(ValueError):
        synthesize_noiseless(build_channels(sc), bad, sy)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linear_in_each_precoder(alpha, beta):
    sc = random_scenario(6)
    ch = build_channels(sc)
    sy = draw_symbols(sc, 1)
    p1, p2 = random_precoders(sc, 2), random_precoders(sc, 3)
    fk = p1.user_precoders
    mix = PrecoderSet.from_vectors(alpha * p1.bs_precoder + beta * p2.bs_precoder, fk)
    only1 = PrecoderSet.from_vectors(p1.bs_precoder, [0 * f for f in fk])
    only2 = PrecoderSet.from_vectors(p2.bs_precoder, [0 * f for f in fk])
    users = PrecoderSet.from_vectors(0 * p1.bs_precoder, fk)
    want = alpha * synthesize_noiseless(ch, only1, sy) + beta * synthesize_noiseless(ch, only2, sy)
    want = want + synthesize_noiseless(ch, users, sy)
    np.testing.assert_allclose(synthesize_noiseless(ch, mix, sy), want, atol=1e-12 * (1 + np.abs(want).max()))


def test_noise_variance_and_determinism():
    n = draw_noise(1_000_000, 2.5, 7)
    assert abs(np.mean(np.abs(n) ** 2) / 2.5 - 1) < 0.01
    assert abs(np.var(n.real) - 1.25) / 1.25 < 0.01
    x = np.ones((3, 4), dtype=complex)
    np.testing.assert_array_equal(draw_received(x, 1.0, 9), draw_received(x, 1.0, 9))
    np.testing.assert_allclose(draw_received(x, 1e-30, 9), x, atol=1e-14)


def test_sample_frame_invariants():
    sc = random_scenario(8)
    pre, sy = random_precoders(sc, 1), draw_symbols(sc, 2)
    spec = design_lloyd_max(2)
    fr = sample_frame(sc, pre, sy, 3, spec)
    noise = fr.received - fr.noiseless
    assert noise.std() > 0
    np.testing.assert_array_equal(fr.quantized, quantize(fr.received, spec))


def test_precoder_set_consistency_and_power():
    sc = random_scenario(9)
    pre = default_precoders(sc)
    np.testing.assert_allclose(pre.bs_covariance, np.outer(pre.bs_precoder, pre.bs_precoder.conj()), atol=1e-10)
    assert pre.check_power(sc.bs_power_max_w, sc.user_power_max_w)
    assert not pre.check_power(0.5 * sc.bs_power_max_w, sc.user_power_max_w)
    with pytest.raises(ValueError):
        PrecoderSet.from_covariances(np.array([[1, 1j], [1j, 1]]), [])


def test_empirical_covariance():
    x = np.array([1 + 1j, 2 - 1j, 0.5j])
    np.testing.assert_allclose(empirical_covariance(np.tile(x, (10, 1))), np.outer(x, x.conj()))
    w = draw_noise((200_000, 3), 1.0, 4)
    np.testing.assert_allclose(empirical_covariance(w), np.eye(3), atol=1e-2)
    with pytest.raises(ValueError):
        empirical_covariance(x[None, :])


def test_transmit_power_accounting():
    # average |b|^2 |f|^2 per DL stream equals tr(R0) sigma_0^2
    sc = random_scenario(10)
    pre = default_precoders(sc)
    p = np.mean([np.mean(np.abs(draw_symbols(sc, s).dl) ** 2) for s in range(200)])
    assert p * np.trace(pre.bs_covariance).real == pytest.approx(sc.bs_power_max_w, rel=0.02)
