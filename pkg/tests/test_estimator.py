import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

from qhrf.crb import received_component_std
from qhrf.estimator import (
    FlatLikelihoodWarning,
    MlExperiment,
    _argmax,
    _grid_model,
    candidate_signals,
    log_likelihood,
    make_experiment,
    ml_estimate,
    mse_vs_crb_sweep,
    sigma2_for_snr,
    stochastic_resonance_sweep,
    theta_crb,
    validation_scenario,
)
from qhrf.quantizer import design_lloyd_max, quantize
from qhrf.scenario import build_channels, default_frame
from qhrf.signal import PrecoderSet, default_precoders, draw_symbols, synthesize_noiseless

from conftest import random_precoders, random_scenario


def _small_validation(theta_deg=30.0):
    sc = validation_scenario(theta_deg, frame=default_frame(1, dl_count=6, ul_count=4, num_symbols=4))
    return sc, default_precoders(sc), draw_symbols(sc, 3)


def test_candidates_match_full_synthesis():
    sc = random_scenario(21, P=2, K=2)
    pre, sy = random_precoders(sc, 1), draw_symbols(sc, 2)
    grid = np.deg2rad([-40.0, 3.0, 25.0])
    cand = candidate_signals(sc, pre, sy, grid, target=1)
    for g, x in zip(grid, cand):
        moved = replace(sc, targets=(sc.targets[0], replace(sc.targets[1], aoa_rad=g)))
        want = synthesize_noiseless(build_channels(moved), pre, sy)
        np.testing.assert_allclose(x, want, atol=1e-12 * np.abs(want).max())


def test_log_likelihood_forms():
    sc, pre, sy = _small_validation()
    x = synthesize_noiseless(build_channels(sc), pre, sy)
    s2 = sigma2_for_snr(x, 5.0)
    rng = np.random.default_rng(0)
    r = x + math.sqrt(s2 / 2) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    want = np.sum(norm.logpdf(r.real, x.real, math.sqrt(s2 / 2)) + norm.logpdf(r.imag, x.imag, math.sqrt(s2 / 2)))
    assert log_likelihood(r, x, s2) == pytest.approx(want, rel=1e-12)

    spec = design_lloyd_max(2)
    std = received_component_std(sc.with_noise_variance(s2), pre)
    sp = [spec.scaled(s) for s in std]
    rq = np.stack([quantize(r[:, n], sp[n]) for n in range(r.shape[1])], axis=1)
    total = 0.0
    for n in range(r.shape[1]):
        edges = sp[n].edges
        for part in (np.real, np.imag):
            c = sp[n].cell_index(part(rq[:, n]))
            s = math.sqrt(s2 / 2)
            total += np.sum(np.log(norm.cdf((edges[c + 1] - part(x[:, n])) / s) - norm.cdf((edges[c] - part(x[:, n])) / s)))
    assert log_likelihood(rq, x, s2, spec, std) == pytest.approx(total, rel=1e-10)


def test_grid_model_agrees_with_log_likelihood_up_to_constant():
    sc, pre, sy = _small_validation()
    exp = MlExperiment(sc, pre, sy, (0.0,), design_lloyd_max(2), grid_deg=(20.0, 40.0, 2.0))
    x = synthesize_noiseless(build_channels(sc), pre, sy)
    s2 = sigma2_for_snr(x, 0.0)
    model = _grid_model(exp, s2)
    rng = np.random.default_rng(1)
    r = x + math.sqrt(s2 / 2) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    from qhrf.estimator import _quantize_per_antenna

    rq = _quantize_per_antenna(r, model)
    fast = model.loglik(rq)
    slow = np.array([log_likelihood(rq, c, s2, exp.spec, model.component_std) for c in model.candidates])
    np.testing.assert_allclose(fast - fast[0], slow - slow[0], atol=1e-8 * np.abs(slow).max())


def test_noiseless_ideal_estimate_is_nearest_grid_point():
    sc, pre, sy = _small_validation(30.02)
    exp = MlExperiment(sc, pre, sy, (0.0,), grid_deg=(25.0, 35.0, 0.05))
    x = synthesize_noiseless(build_channels(sc), pre, sy)
    assert math.degrees(ml_estimate(x, exp, sigma2=1.0)) == pytest.approx(30.0, abs=1e-9)
    on_grid = MlExperiment(validation_scenario(30.0, frame=sc.frame), pre, sy, (0.0,), grid_deg=(25.0, 35.0, 0.05))
    x0 = synthesize_noiseless(build_channels(on_grid.scenario), pre, sy)
    assert math.degrees(ml_estimate(x0, on_grid, sigma2=1.0)) == pytest.approx(30.0, abs=1e-9)


def test_ties_go_to_lower_index_and_flat_warns():
    grid = np.arange(10.0)
    ll = np.zeros(10)
    ll[[3, 4]] = 1.0
    assert _argmax(ll, grid, refine=False) == (3.0, False)
    assert _argmax(np.ones(10), grid, refine=False) == (0.0, True)
    sc, pre, sy = _small_validation()
    silent = PrecoderSet.from_vectors(np.zeros(sc.n_bs), [np.zeros(n) for n in sc.arrays.user_antennas])
    exp = MlExperiment(sc, silent, sy, (0.0,), grid_deg=(20.0, 40.0, 1.0))
    with pytest.warns(FlatLikelihoodWarning):
        theta = ml_estimate(np.zeros((sc.frame.num_symbols, sc.n_bs), complex), exp, sigma2=1.0)
    assert math.degrees(theta) == pytest.approx(20.0)


def test_two_candidate_error_probability():
    # grid {truth, truth + 2 deg}: MSE = P(error) * delta^2, P(error) = Q(d / sqrt(2 sigma^2))
    sc, pre, sy = _small_validation()
    cand = candidate_signals(sc, pre, sy, np.deg2rad([30.0, 32.0]))
    d = np.linalg.norm(cand[1] - cand[0])
    s2 = (d / 1.5) ** 2 / 2  # Q(1.5)
    snr = 10 * math.log10(np.mean(np.abs(cand[0]) ** 2) / s2)
    trials = 4000
    exp = MlExperiment(sc, pre, sy, (snr,), grid_deg=(30.0, 32.0, 2.0), trials=trials, seed=5)
    res = mse_vs_crb_sweep(exp)
    p = norm.sf(1.5)
    pe = res.mse[0] / np.deg2rad(2.0) ** 2
    assert abs(pe - p) < 4 * math.sqrt(p * (1 - p) / trials)


def test_sweep_reproducible_and_unbiased_at_high_snr():
    sc, pre, sy = _small_validation()
    kw = dict(grid_deg=(25.0, 35.0, 0.05), trials=200, seed=9, refine=True)
    a = mse_vs_crb_sweep(MlExperiment(sc, pre, sy, (10.0, 30.0), **kw))
    b = mse_vs_crb_sweep(MlExperiment(sc, pre, sy, (10.0, 30.0), **kw))
    assert a == b
    row = a.rows[1]
    # bias within a few standard errors, MSE within a factor 2 of the CRB
    assert abs(row.bias) < 4 * math.sqrt(row.mse / row.trials) + 1e-6
    assert 0.5 < row.mse / row.crb < 2.0


def test_theta_crb_scaling_and_quantization_penalty():
    sc, pre, sy = _small_validation()
    x = synthesize_noiseless(build_channels(sc), pre, sy)
    s2 = sigma2_for_snr(x, 0.0)
    c1 = theta_crb(sc.with_noise_variance(s2), pre, sy, None)
    c2 = theta_crb(sc.with_noise_variance(10 * s2), pre, sy, None)
    assert c2 / c1 == pytest.approx(10.0, rel=1e-12)
    assert theta_crb(sc.with_noise_variance(s2), pre, sy, design_lloyd_max(1)) >= c1
    silent = PrecoderSet.from_vectors(np.zeros(sc.n_bs), [np.zeros(n) for n in sc.arrays.user_antennas])
    assert theta_crb(sc, silent, sy, None) == np.inf


def test_experiment_validation():
    with pytest.raises(ValueError):
        make_experiment(theta_deg=30.0, grid_deg=(-10.0, 10.0, 0.1))
    with pytest.raises(ValueError):
        make_experiment(trials=0)
    with pytest.raises(ValueError):
        make_experiment(grid_deg=(0.0, 40.0, 0.0))


def test_resonance_small_sweep():
    sc = validation_scenario(0.0, frame=default_frame(1, dl_count=6, ul_count=4, num_symbols=4))
    snr = np.arange(-20.0, 61.0, 10.0)
    res = stochastic_resonance_sweep(sc, bits=(1, 4), snr_db=snr)
    ideal = res.crb[None]
    assert np.all(np.diff(ideal) < 0)
    # quantization never helps, and 1-bit sensing stops improving with SNR
    for b in (1, 4):
        assert np.all(res.crb[b] >= ideal * (1 - 1e-9))
    assert res.has_interior_minimum(1)
    assert not res.has_interior_minimum(None)
