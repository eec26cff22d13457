import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from qhrf.quantizer import (
    adc_dynamic_range_db,
    design_lloyd_max,
    min_bits_for_dr,
    quantize,
    signal_dynamic_range_db,
)

# plain Lloyd iteration with scipy quadrature, run once offline and frozen
ETA2_ORACLE = 0.11748184782932927
LEVELS2_ORACLE = np.array([-1.5104176084989858, -0.452780034636439, 0.452780034636439, 1.5104176084989858])
ETA3_ORACLE = 0.03454776078850373


def test_one_bit_closed_form():
    q = design_lloyd_max(1)
    assert q.thresholds.tolist() == [0.0]
    assert q.levels == pytest.approx([-math.sqrt(2 / math.pi), math.sqrt(2 / math.pi)], abs=1e-15)
    assert abs(q.eta - (1 - 2 / math.pi)) < 1e-12


def test_two_and_three_bit_against_frozen_lloyd_oracle():
    q2 = design_lloyd_max(2)
    assert abs(q2.eta - ETA2_ORACLE) < 1e-9
    np.testing.assert_allclose(q2.levels, LEVELS2_ORACLE, atol=1e-9)
    assert abs(design_lloyd_max(3).eta - ETA3_ORACLE) < 1e-9


@pytest.mark.parametrize("bits", [1, 2, 3, 4, 6, 8])
def test_fixed_point_and_structure(bits):
    q = design_lloyd_max(bits)
    assert len(q.thresholds) == 2**bits - 1 and len(q.levels) == 2**bits
    assert np.all(np.diff(q.thresholds) > 0) and np.all(np.diff(q.levels) > 0)
    e = q.edges
    assert np.all((q.levels > e[:-1]) & (q.levels < e[1:]))
    # centroid and midpoint conditions
    np.testing.assert_allclose(q.thresholds, 0.5 * (q.levels[1:] + q.levels[:-1]), atol=1e-10)
    p = stats.norm.cdf(e[1:]) - stats.norm.cdf(e[:-1])
    centroid = (stats.norm.pdf(e[:-1]) - stats.norm.pdf(e[1:])) / p
    np.testing.assert_allclose(q.levels, centroid, atol=1e-10)


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_eta_is_the_mse(bits):
    q = design_lloyd_max(bits)
    e = q.edges
    mse = sum(
        integrate.quad(lambda x: (x - q.levels[i]) ** 2 * stats.norm.pdf(x), e[i], e[i + 1], epsabs=1e-14)[0]
        for i in range(q.num_cells)
    )
    assert abs(mse - q.eta) < 1e-9


def test_eta_decreases_with_bits():
    etas = [design_lloyd_max(b).eta for b in range(1, 11)]
    assert all(a > b for a, b in zip(etas, etas[1:]))
    assert etas[-1] < 1e-4


def test_design_rejects_bad_bits():
    for b in (0, 17):
        with pytest.raises(ValueError):
            design_lloyd_max(b)


def test_quantize_examples():
    q = design_lloyd_max(1)
    c = math.sqrt(2 / math.pi)
    assert quantize(np.array([0.3 - 2.1j]), q)[0] == pytest.approx(c - 1j * c)
    q2 = design_lloyd_max(2)
    t = q2.thresholds[1]
    assert quantize(np.array([t]), q2)[0] == q2.levels[2]  # tie goes to the upper cell


def test_quantize_mc_mse_and_bussgang_gain():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(1_000_000)
    q = design_lloyd_max(3)
    y = quantize(x, q)
    assert abs(np.mean((y - x) ** 2) - q.eta) < 1e-3
    # E[Q(x) x] / E[x^2] = 1 - eta within three standard errors
    prod = y * x
    g = prod.mean() / np.mean(x**2)
    se = prod.std() / math.sqrt(len(x))
    assert abs(g - (1 - q.eta)) < 3 * se + 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.integers(1, 6))
def test_quantize_is_idempotent(xs, bits):
    q = design_lloyd_max(bits)
    y = quantize(np.array(xs), q)
    np.testing.assert_array_equal(quantize(y, q), y)


def test_scaled_design():
    q = design_lloyd_max(2, input_std=3.0)
    np.testing.assert_allclose(q.levels, 3 * LEVELS2_ORACLE, atol=1e-8)
    assert q.eta == pytest.approx(ETA2_ORACLE, abs=1e-9)


def test_dynamic_range_rules():
    assert adc_dynamic_range_db(1) == pytest.approx(7.78)
    assert adc_dynamic_range_db(4) == pytest.approx(25.84)
    assert signal_dynamic_range_db(100.0, 1.0) == pytest.approx(20.0)
    assert signal_dynamic_range_db(2.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        signal_dynamic_range_db(0.0, 1.0)
    assert min_bits_for_dr(20.0) == 4
    assert min_bits_for_dr(0.0) == 1
    assert min_bits_for_dr(25.84) == 4


@settings(max_examples=200, deadline=None)
@given(st.floats(-30, 120), st.floats(-30, 120), st.floats(0, 10))
def test_min_bits_non_decreasing(a, b, margin):
    lo, hi = sorted((a, b))
    assert min_bits_for_dr(lo, margin) <= min_bits_for_dr(hi, margin)
    nb = min_bits_for_dr(hi, margin)
    assert adc_dynamic_range_db(nb) >= hi + margin
    if nb > 1:
        assert adc_dynamic_range_db(nb - 1) < hi + margin
