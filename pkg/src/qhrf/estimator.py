"""Grid-search ML estimation of a target AoA and CRB sweeps over SNR.

Only the angle of one target is unknown; every other parameter is held at
its true value. Symbols are fixed per experiment and trials average over
the noise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .crb import ParameterVector, ideal_fim, log_cell_probability, quantized_fim, received_component_std
from .quantizer import QuantizerSpec, design_lloyd_max
from .scenario import (
    ScenarioConfig,
    build_channels,
    doppler_phase,
    scenario_from_geometry,
    steering_vector,
)
from .signal import PrecoderSet, Symbols, default_precoders, draw_noise, draw_symbols, synthesize_noiseless

TIE_SPAN = 3


class FlatLikelihoodWarning(UserWarning):
    pass


def validation_scenario(
    theta_deg: float = 30.0,
    user_angle_deg: float = -30.0,
    echo_gain: complex = 1.0,
    direct_gain: complex = 1.0,
    reflected_gain: complex = 0.5,
    **kw,
) -> ScenarioConfig:
    """One target and one user at 100 m with unit-order path gains.

    The geometric delays and angles come from :func:`scenario_from_geometry`;
    the gains are replaced so that echo and reflections are not buried under
    the direct path (the ML study is about the estimator, not the link budget).
    """
    kw.setdefault("bs_power_max_dbm", 30.0)
    kw.setdefault("user_power_max_dbm", 30.0)
    sc = scenario_from_geometry(
        [(100.0, np.deg2rad(theta_deg))], [(100.0, np.deg2rad(user_angle_deg))], **kw
    )
    t = replace(sc.targets[0], complex_gain=complex(echo_gain))
    u = sc.users[0]
    paths = tuple(replace(p, complex_gain=complex(reflected_gain)) for p in u.reflected_paths)
    u = replace(u, complex_gain=complex(direct_gain), reflected_paths=paths)
    return replace(sc, targets=(t,), users=(u,))


def signal_power(x) -> float:
    """Per-antenna received signal power, mean |x_{n,l}|^2."""
    return float(np.mean(np.abs(x) ** 2))


def sigma2_for_snr(x, snr_db: float) -> float:
    return signal_power(x) / 10 ** (snr_db / 10)


# ---------------------------------------------------------------------------
# candidate signals and likelihoods
# ---------------------------------------------------------------------------

def candidate_signals(
    scenario: ScenarioConfig,
    precoders: PrecoderSet,
    symbols: Symbols,
    grid_rad,
    target: int = 0,
) -> np.ndarray:
    """x(theta) on the grid for one target angle, shape (G, L, N).

    x = x_rest + a(theta)[n] * (e[l] * a(theta)^T f + r[l]) where e collects
    the echo of the target and r its reflected uplink paths.
    """
    fr, ar = scenario.frame, scenario.arrays
    N, d = ar.bs_antennas, ar.element_spacing_wavelengths
    v = fr.sample_index
    grid = np.asarray(grid_rad, dtype=float)
    tgt = scenario.targets[target]
    dop = doppler_phase(tgt.doppler_hz, fr)
    m0 = np.asarray(fr.dl_subcarriers, dtype=float)

    def phase_sum(syms, m, tau):
        c = np.exp(-2j * np.pi * ((m * fr.subcarrier_spacing_hz + fr.carrier_freq_hz) * tau - m * v / fr.samples_per_symbol))
        return syms @ c

    e = tgt.complex_gain * dop * phase_sum(symbols.dl, m0, 2 * tgt.one_way_delay_s)
    r = np.zeros(fr.num_symbols, dtype=complex)
    for k, u in enumerate(scenario.users):
        mk = np.asarray(fr.ul_subcarriers[k], dtype=float)
        for p in u.reflected_paths:
            if p.target_index != target:
                continue
            au = steering_vector(p.aod_to_target_rad, ar.user_antennas[k], d)
            r += p.complex_gain * dop * phase_sum(symbols.ul[k], mk, p.delay_s) * (au @ precoders.user_precoders[k])

    # everything that does not move with this target's angle
    others = list(scenario.targets)
    others[target] = replace(tgt, complex_gain=0.0)
    users = tuple(
        replace(u, reflected_paths=tuple(
            replace(p, complex_gain=0.0) if p.target_index == target else p for p in u.reflected_paths
        ))
        for u in scenario.users
    )
    rest = synthesize_noiseless(
        build_channels(replace(scenario, targets=tuple(others), users=users)), precoders, symbols
    )
    A = np.exp(2j * np.pi * d * np.outer(np.sin(grid), np.arange(N)))  # (G, N)
    tx = A @ precoders.bs_precoder  # a(theta)^T f
    return rest[None] + A[:, None, :] * (e[None, :, None] * tx[:, None, None] + r[None, :, None])


def log_likelihood(
    observation,
    candidate_x,
    sigma2: float,
    spec: QuantizerSpec | None = None,
    component_std=None,
) -> float:
    """log p(observation | x) for quantized (``spec``) or ideal observations.

    Quantized: sum over antennas, symbols and real/imaginary parts of
    log P(cell). ``spec`` is a unit design rescaled per antenna to
    ``component_std``. Ideal: the circular Gaussian density.
    """
    r = np.asarray(observation)
    x = np.asarray(candidate_x)
    if r.shape != x.shape:
        raise ValueError("observation and candidate shapes differ")
    if spec is None:
        return float(-np.sum(np.abs(r - x) ** 2) / sigma2 - r.size * np.log(np.pi * sigma2))
    std = np.broadcast_to(np.asarray(component_std, dtype=float), (r.shape[-1],))
    unit = spec.scaled(1.0)
    total = 0.0
    for n in range(r.shape[-1]):
        sp = unit.scaled(std[n])
        for part in (np.real, np.imag):
            cells = sp.cell_index(part(r[..., n]))
            total += float(np.sum(log_cell_probability(part(x[..., n]), sp, sigma2, cells)))
    return total


@dataclass
class _GridModel:
    """Precomputed per-candidate terms that make one grid search a gather-and-sum."""

    grid: np.ndarray
    candidates: np.ndarray  # (G, L, N)
    sigma2: float
    spec: QuantizerSpec | None
    component_std: np.ndarray | None
    table: np.ndarray | None = None  # (G, 2*L*N, B) log cell probabilities
    scaled: list = field(default_factory=list)

    def __post_init__(self):
        if self.spec is None:
            return
        G, L, N = self.candidates.shape
        unit = self.spec.scaled(1.0)
        B = unit.num_cells
        self.scaled = [unit.scaled(s) for s in self.component_std]
        tab = np.empty((G, 2, L, N, B))
        cells = np.arange(B)
        for n, sp in enumerate(self.scaled):
            for c, part in enumerate((np.real, np.imag)):
                xv = part(self.candidates[:, :, n])[..., None]
                tab[:, c, :, n, :] = log_cell_probability(xv, sp, self.sigma2, cells)
        self.table = tab.reshape(G, 2 * L * N, B)

    def cells(self, rq) -> np.ndarray:
        out = np.empty((2,) + rq.shape, dtype=np.intp)
        for n, sp in enumerate(self.scaled):
            out[0, :, n] = sp.cell_index(rq[:, n].real)
            out[1, :, n] = sp.cell_index(rq[:, n].imag)
        return out.reshape(-1)

    def loglik(self, observation) -> np.ndarray:
        """Log-likelihood over the grid (up to a candidate-independent constant)."""
        if self.spec is None:
            X = self.candidates.reshape(len(self.grid), -1)
            r = observation.reshape(-1)
            return (2 * np.real(X.conj() @ r) - np.sum(np.abs(X) ** 2, axis=1)) / self.sigma2
        c = self.cells(observation)
        return self.table[:, np.arange(c.size), c].sum(axis=1)


def _argmax(ll, grid, refine: bool, rtol: float = 1e-12):
    i = int(np.argmax(ll))  # first maximum: ties go to the lower index
    top = ll[i]
    ties = np.flatnonzero(ll >= top - rtol * max(1.0, abs(top)))
    flat = ties[-1] - ties[0] + 1 > TIE_SPAN
    theta = grid[i]
    if refine and 0 < i < len(grid) - 1 and not flat:
        y0, y1, y2 = ll[i - 1], ll[i], ll[i + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            theta = grid[i] + 0.5 * (y0 - y2) / den * (grid[1] - grid[0])
    return float(theta), bool(flat)


@dataclass(frozen=True)
class MlExperiment:
    scenario: ScenarioConfig
    precoders: PrecoderSet
    symbols: Symbols
    snr_db: tuple[float, ...]
    spec: QuantizerSpec | None = None  # None: ideal ADC
    target: int = 0
    grid_deg: tuple[float, float, float] = (-90.0, 90.0, 0.05)
    trials: int = 1000
    seed: int = 0
    refine: bool = False

    def __post_init__(self):
        lo, hi, step = self.grid_deg
        if step <= 0 or hi <= lo:
            raise ValueError("grid needs lo < hi and a positive step")
        truth = np.rad2deg(self.scenario.targets[self.target].aoa_rad)
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        if not lo - tol <= truth <= hi + tol:
            raise ValueError("grid does not cover the true angle")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))

    @property
    def grid_rad(self) -> np.ndarray:
        lo, hi, step = self.grid_deg
        n = int(round((hi - lo) / step)) + 1
        return np.deg2rad(lo + step * np.arange(n))

    @property
    def truth_rad(self) -> float:
        return self.scenario.targets[self.target].aoa_rad


def make_experiment(
    theta_deg: float = 30.0,
    snr_db: Sequence[float] = tuple(range(-20, 41, 5)),
    bits: int | None = None,
    trials: int = 1000,
    seed: int = 0,
    **kw,
) -> MlExperiment:
    """Experiment on :func:`validation_scenario` with default beams and fixed symbols."""
    sc = validation_scenario(theta_deg)
    pre = default_precoders(sc)
    sy = draw_symbols(sc, np.random.default_rng([seed, 1]))
    spec = None if bits is None else design_lloyd_max(bits)
    return MlExperiment(sc, pre, sy, tuple(snr_db), spec, trials=trials, seed=seed, **kw)


def ml_estimate(observation, experiment: MlExperiment, sigma2: float | None = None) -> float:
    """Grid argmax for a single observation (quantized if the experiment has a spec)."""
    model = _grid_model(experiment, sigma2 if sigma2 is not None else experiment.scenario.sigma2)
    theta, flat = _argmax(model.loglik(np.asarray(observation)), model.grid, experiment.refine)
    if flat:
        warnings.warn("likelihood maximum ties span more than three grid cells", FlatLikelihoodWarning)
    return theta


def _grid_model(exp: MlExperiment, sigma2: float) -> _GridModel:
    sc = exp.scenario.with_noise_variance(sigma2)
    cand = candidate_signals(sc, exp.precoders, exp.symbols, exp.grid_rad, exp.target)
    std = None
    if exp.spec is not None:
        std = received_component_std(sc, exp.precoders)
    return _GridModel(exp.grid_rad, cand, sigma2, exp.spec, std)


@dataclass(frozen=True)
class SweepRow:
    snr_db: float
    sigma2: float
    mse: float
    crb: float
    bias: float
    flat_trials: int
    trials: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    quantizer_bits: int | None
    seed: int
    trials: int

    @property
    def snr_db(self) -> np.ndarray:
        return np.array([r.snr_db for r in self.rows])

    @property
    def mse(self) -> np.ndarray:
        return np.array([r.mse for r in self.rows])

    @property
    def crb(self) -> np.ndarray:
        return np.array([r.crb for r in self.rows])


def theta_crb(scenario, precoders, symbols, spec: QuantizerSpec | None, target: int = 0) -> float:
    """1 / F_theta,theta with all other parameters known; inf without information."""
    params = ParameterVector.from_scenario(scenario)
    which = f"theta_tar[{target}]"
    if spec is None:
        F = ideal_fim(scenario, precoders, symbols, params, which=which)
    else:
        F = quantized_fim(scenario, precoders, symbols, spec, params, which=which)
    f = float(F.matrix[0, 0])
    return 1.0 / f if f > 0 else np.inf


def mse_vs_crb_sweep(exp: MlExperiment) -> SweepResult:
    """ML mean squared error and CRB at every SNR point.

    Each SNR point uses its own seeded stream, so points are reproducible in
    isolation.
    """
    x = synthesize_noiseless(build_channels(exp.scenario), exp.precoders, exp.symbols)
    truth = exp.truth_rad
    rows = []
    for i, snr in enumerate(exp.snr_db):
        s2 = sigma2_for_snr(x, snr)
        model = _grid_model(exp, s2)
        rng = np.random.default_rng([exp.seed, i])
        est = np.empty(exp.trials)
        flat = 0
        for t in range(exp.trials):
            r = x + draw_noise(x.shape, s2, rng)
            if exp.spec is not None:
                r = _quantize_per_antenna(r, model)
            est[t], f = _argmax(model.loglik(r), model.grid, exp.refine)
            flat += f
        crb = theta_crb(exp.scenario.with_noise_variance(s2), exp.precoders, exp.symbols, exp.spec, exp.target)
        err = est - truth
        rows.append(SweepRow(snr, s2, float(np.mean(err**2)), crb, float(np.mean(err)), flat, exp.trials))
    if any(r.flat_trials for r in rows):
        warnings.warn(
            f"{sum(r.flat_trials for r in rows)} trials had likelihood ties wider than {TIE_SPAN} cells",
            FlatLikelihoodWarning,
        )
    bits = None if exp.spec is None else exp.spec.bits
    return SweepResult(tuple(rows), bits, exp.seed, exp.trials)


def _quantize_per_antenna(r, model: _GridModel):
    out = np.empty_like(r)
    for n, sp in enumerate(model.scaled):
        out[:, n] = sp.levels[sp.cell_index(r[:, n].real)] + 1j * sp.levels[sp.cell_index(r[:, n].imag)]
    return out


@dataclass(frozen=True)
class ResonanceResult:
    snr_db: np.ndarray
    crb: dict  # bits (None = ideal) -> CRB array
    argmin_snr_db: dict

    def has_interior_minimum(self, bits) -> bool:
        c = self.crb[bits]
        i = int(np.argmin(c))
        return 0 < i < len(c) - 1 and c[0] > c[i] and c[-1] > c[i]


def stochastic_resonance_sweep(
    scenario: ScenarioConfig | None = None,
    bits: Sequence[int] = (1, 2, 3, 4),
    snr_db: Sequence[float] = tuple(range(-20, 81, 5)),
    precoders: PrecoderSet | None = None,
    symbols: Symbols | None = None,
    seed: int = 0,
    target: int = 0,
) -> ResonanceResult:
    """CRB of one target angle versus SNR for each resolution and the ideal ADC."""
    scenario = scenario or validation_scenario(theta_deg=0.0)
    precoders = precoders or default_precoders(scenario)
    symbols = symbols or draw_symbols(scenario, np.random.default_rng([seed, 1]))
    x = synthesize_noiseless(build_channels(scenario), precoders, symbols)
    snr = np.asarray(snr_db, dtype=float)
    crb, argmin = {}, {}
    for b in [None, *bits]:
        spec = None if b is None else design_lloyd_max(b)
        c = np.array([
            theta_crb(scenario.with_noise_variance(sigma2_for_snr(x, s)), precoders, symbols, spec, target)
            for s in snr
        ])
        crb[b] = c
        argmin[b] = float(snr[int(np.argmin(c))])
    return ResonanceResult(snr, crb, argmin)
