"""Noiseless, noisy and quantized received samples."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quantizer import QuantizerSpec, quantize
from .scenario import ChannelSet, ScenarioConfig, build_channels, steering_vector


@dataclass(frozen=True)
class Symbols:
    """Data symbols b[l, m] for the DL stream and each user."""

    dl: np.ndarray
    ul: tuple[np.ndarray, ...]


def draw_symbols(scenario: ScenarioConfig, rng, kind: str = "gaussian") -> Symbols:
    """i.i.d. zero-mean symbols with variance ``frame.symbol_power[k]``."""
    rng = np.random.default_rng(rng)
    fr = scenario.frame
    L = fr.num_symbols

    def one(count, power):
        if kind == "gaussian":
            s = (rng.standard_normal((L, count)) + 1j * rng.standard_normal((L, count))) / np.sqrt(2)
        elif kind == "qpsk":
            s = np.exp(1j * np.pi / 4 * (2 * rng.integers(0, 4, (L, count)) + 1))
        else:
            raise ValueError(f"unknown constellation {kind!r}")
        return np.sqrt(power) * s

    dl = one(len(fr.dl_subcarriers), fr.symbol_power[0])
    ul = tuple(one(len(c), fr.symbol_power[k + 1]) for k, c in enumerate(fr.ul_subcarriers))
    return Symbols(dl, ul)


def _hermitian_psd_check(R, tol=1e-10):
    if not np.allclose(R, R.conj().T, atol=tol * max(1.0, np.abs(R).max())):
        raise ValueError("covariance is not Hermitian")


@dataclass(frozen=True)
class PrecoderSet:
    """BS precoder f and user precoders f_k together with their covariances.

    Built from vectors with :meth:`from_vectors`; covariance-only sets (from the
    optimizer before rank-1 recovery) leave the vectors as ``None``.
    """

    bs_covariance: np.ndarray
    user_covariances: tuple[np.ndarray, ...]
    bs_precoder: np.ndarray | None = None
    user_precoders: tuple[np.ndarray, ...] | None = None

    @classmethod
    def from_vectors(cls, f, fks) -> "PrecoderSet":
        f = np.asarray(f, dtype=complex)
        fks = tuple(np.asarray(x, dtype=complex) for x in fks)
        return cls(np.outer(f, f.conj()), tuple(np.outer(x, x.conj()) for x in fks), f, fks)

    @classmethod
    def from_covariances(cls, R0, Rks) -> "PrecoderSet":
        R0 = np.asarray(R0, dtype=complex)
        Rks = tuple(np.asarray(R, dtype=complex) for R in Rks)
        for R in (R0, *Rks):
            _hermitian_psd_check(R)
        return cls(R0, Rks)

    def check_power(self, p_bs: float, p_user: float, rtol: float = 1e-6) -> bool:
        ok = np.trace(self.bs_covariance).real <= p_bs * (1 + rtol)
        return bool(ok and all(np.trace(R).real <= p_user * (1 + rtol) for R in self.user_covariances))


def default_precoders(scenario: ScenarioConfig) -> PrecoderSet:
    """Full-power conjugate beams: BS toward the first target, users toward the BS."""
    ar = scenario.arrays
    N, d = ar.bs_antennas, ar.element_spacing_wavelengths
    theta = scenario.targets[0].aoa_rad if scenario.targets else 0.0
    f = np.sqrt(scenario.bs_power_max_w / N) * steering_vector(theta, N, d).conj()
    fks = [
        np.sqrt(scenario.user_power_max_w / Nk) * steering_vector(u.aod_rad, Nk, d).conj()
        for u, Nk in zip(scenario.users, ar.user_antennas)
    ]
    return PrecoderSet.from_vectors(f, fks)


def synthesize_noiseless(channels: ChannelSet, precoders: PrecoderSet, symbols: Symbols) -> np.ndarray:
    """x_l[v] for every OFDM symbol l; returns shape (L, N).

    Direct sum over echo, direct-path and reflected-path channel matrices.
    """
    f = precoders.bs_precoder
    fks = precoders.user_precoders
    if f is None or fks is None:
        raise ValueError("signal synthesis needs precoder vectors, not just covariances")
    if len(fks) != len(channels.direct):
        raise ValueError("one precoder per user required")
    x = 0
    for h in channels.echo:
        if h.shape[-1] != f.shape[0]:
            raise ValueError("BS precoder length does not match the array")
        x = x + np.einsum("lm,lmnp,p->ln", symbols.dl, h, f)
    for k, fk in enumerate(fks):
        if channels.direct[k].shape[-1] != fk.shape[0]:
            raise ValueError(f"user {k} precoder length does not match its array")
        x = x + np.einsum("lm,lmnp,p->ln", symbols.ul[k], channels.direct[k], fk)
        for h in channels.reflected[k]:
            x = x + np.einsum("lm,lmnp,p->ln", symbols.ul[k], h, fk)
    if np.isscalar(x):
        L = symbols.dl.shape[0]
        N = channels.echo[0].shape[2] if channels.echo else channels.direct[0].shape[2]
        x = np.zeros((L, N), dtype=complex)
    return x


def noiseless_signal(scenario: ScenarioConfig, precoders: PrecoderSet, symbols: Symbols) -> np.ndarray:
    return synthesize_noiseless(build_channels(scenario), precoders, symbols)


def draw_noise(shape, sigma2: float, rng) -> np.ndarray:
    """Circular complex Gaussian, variance sigma2/2 per component."""
    rng = np.random.default_rng(rng)
    s = np.sqrt(sigma2 / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_received(noiseless: np.ndarray, sigma2: float, rng) -> np.ndarray:
    return noiseless + draw_noise(noiseless.shape, sigma2, rng)


@dataclass
class SampledFrame:
    noiseless: np.ndarray
    received: np.ndarray
    quantized: np.ndarray | None
    symbols: Symbols | None = None
    extra: dict = field(default_factory=dict)


def sample_frame(
    scenario: ScenarioConfig,
    precoders: PrecoderSet,
    symbols: Symbols,
    rng,
    spec: QuantizerSpec | None = None,
) -> SampledFrame:
    x = noiseless_signal(scenario, precoders, symbols)
    r = draw_received(x, scenario.sigma2, rng)
    rq = None if spec is None else quantize(r, spec)
    return SampledFrame(x, r, rq, symbols)


def empirical_covariance(samples) -> np.ndarray:
    """Sample mean of x x^H over the leading axis of ``samples`` (shape (S, N))."""
    x = np.asarray(samples)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two realizations of shape (S, N)")
    return x.T @ x.conj() / x.shape[0]
