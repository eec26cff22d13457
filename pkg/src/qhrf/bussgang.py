"""Bussgang linearization of the quantized receiver.

Closed-form signal covariance, scalar-eta and exact 1-bit effective-noise
covariances, uplink rate lower bounds and the low-SNR lower bound on the
FIM of the target angles (linear in the transmit covariances).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ChannelSet, FrameConfig, ScenarioConfig, build_channels, doppler_phase
from .scenario import steering_derivative, steering_vector, subcarrier_phase

RATE_MODELS = ("general", "low-snr", "1bit-low-snr", "trace")


# ---------------------------------------------------------------------------
# covariances
# ---------------------------------------------------------------------------

def uplink_gram(channels: ChannelSet, frame: FrameConfig, k: int) -> np.ndarray:
    """sigma_k^2 sum_m mean_l (H^UL)^H H^UL, the N_k x N_k quadratic form of tr(R_xx)."""
    H = channels.uplink(k)
    return frame.symbol_power[k + 1] * np.einsum("lmnp,lmnq->pq", H.conj(), H) / H.shape[0]


def signal_covariance(
    channels: ChannelSet,
    R0,
    Rks,
    frame: FrameConfig,
    include_echo: bool = False,
    ell: int | None = None,
) -> np.ndarray:
    """R_xx = sum_k sum_m sigma_k^2 H^UL R_k (H^UL)^H.

    The echo auto-covariance sigma_0^2 sum_m H^echo R_0 (H^echo)^H, with
    H^echo summed over targets, is added when ``include_echo`` is set. With ``ell=None`` the result is averaged
    over the OFDM symbols (identical per symbol when there is no Doppler).
    """
    Rks = list(Rks)
    if len(Rks) != len(channels.direct):
        raise ValueError(f"{len(Rks)} user covariances for {len(channels.direct)} users")
    sl = slice(None) if ell is None else slice(ell, ell + 1)
    N = channels.echo[0].shape[2] if channels.echo else channels.direct[0].shape[2]
    R = np.zeros((N, N), dtype=complex)
    for k, Rk in enumerate(Rks):
        H = channels.uplink(k)[sl]
        Rk = np.asarray(Rk)
        if Rk.shape != (H.shape[-1],) * 2:
            raise ValueError(f"user {k} covariance has shape {Rk.shape}, expected {(H.shape[-1],) * 2}")
        R += frame.symbol_power[k + 1] * np.einsum("lmnp,pq,lmrq->nr", H, Rk, H.conj()) / H.shape[0]
    if include_echo and channels.echo:
        R0 = np.asarray(R0)
        # every target echoes the same downlink symbols, so the echoes add coherently
        H = sum(channels.echo)[sl]
        if R0.shape != (H.shape[-1],) * 2:
            raise ValueError("BS covariance does not match the array")
        R += frame.symbol_power[0] * np.einsum("lmnp,pq,lmrq->nr", H, R0, H.conj()) / H.shape[0]
    return 0.5 * (R + R.conj().T)


def received_covariance(channels, R0, Rks, frame, sigma2: float, include_echo: bool = True) -> np.ndarray:
    """R_rr = R_xx + sigma^2 I (the quantizer sees the echo as well by default)."""
    Rx = signal_covariance(channels, R0, Rks, frame, include_echo=include_echo)
    return Rx + sigma2 * np.eye(Rx.shape[0])


def bussgang_covariances(R_zz, R_rr, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Scalar-eta approximations (R_zbar, R_qq) for G = (1 - eta) I."""
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    R_zz, R_rr = np.asarray(R_zz), np.asarray(R_rr)
    d = np.diag(np.diag(R_rr))
    g2, mix = (1 - eta) ** 2, eta * (1 - eta)
    return g2 * R_zz + mix * d, g2 * R_rr + mix * d


def low_snr_covariances(sigma2: float, n: int, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """R_rr ~ R_zz = sigma^2 I, giving sigma^2 (1 - eta) I for both."""
    I = sigma2 * np.eye(n)
    return bussgang_covariances(I, I, eta)


def _check_pd(R):
    R = np.asarray(R)
    if not np.allclose(R, R.conj().T, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise ValueError("matrix is not Hermitian")
    if np.linalg.eigvalsh(0.5 * (R + R.conj().T))[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return R


def _complex_arcsin(C):
    return np.arcsin(np.clip(C.real, -1, 1)) + 1j * np.arcsin(np.clip(C.imag, -1, 1))


def _correlation(R):
    """D^{-1/2} R D^{-1/2} with an exact unit diagonal, and D^{-1/2}.

    arcsin has infinite slope at 1, so a diagonal of 1 - 1e-16 would cost
    about 1e-8 after the transform.
    """
    dinv = 1.0 / np.sqrt(np.real(np.diag(R)))
    C = dinv[:, None] * R * dinv[None, :]
    np.fill_diagonal(C, 1.0)
    return C, dinv


def arcsine_covariances_1bit(R_rr, R_zz=None):
    """Exact second moments of q = (sign Re r + j sign Im r) / sqrt(2).

    Returns (R_qq, R_qr, G, R_zbar); ``R_zz`` defaults to the identity scaled
    so that it is absent (pass the noise covariance to get R_zbar).
    """
    R_rr = _check_pd(R_rr)
    C, dinv = _correlation(R_rr)
    R_qq = (2 / np.pi) * _complex_arcsin(C)
    R_qr = np.sqrt(2 / np.pi) * dinv[:, None] * R_rr
    G = np.sqrt(2 / np.pi) * np.diag(dinv)
    R_zbar = R_qq - (2 / np.pi) * C
    if R_zz is not None:
        R_zbar = R_zbar + (2 / np.pi) * dinv[:, None] * np.asarray(R_zz) * dinv[None, :]
    return R_qq, R_qr, G, R_zbar


@dataclass(frozen=True)
class CovarianceBundle:
    signal_cov: np.ndarray
    noise_cov: np.ndarray
    received_cov: np.ndarray
    distortion_matrix: np.ndarray
    effective_noise_cov: np.ndarray
    quantized_cov: np.ndarray
    model: str


def covariance_bundle(
    scenario: ScenarioConfig, R0, Rks, eta: float | None = None, model: str = "approx"
) -> CovarianceBundle:
    """All second-order quantities at one operating point.

    ``model`` is ``"approx"`` or ``"low-snr"`` (scalar eta) or ``"1bit"``
    (arcsine law). The signal covariance is the uplink-only one; the received
    covariance includes the echo.
    """
    ch = build_channels(scenario)
    n = scenario.n_bs
    Rzz = scenario.sigma2 * np.eye(n)
    Rxx = signal_covariance(ch, R0, Rks, scenario.frame)
    Rrr = received_covariance(ch, R0, Rks, scenario.frame, scenario.sigma2)
    if model == "1bit":
        Rqq, _, G, Rzbar = arcsine_covariances_1bit(Rrr, Rzz)
    elif model in ("approx", "low-snr"):
        if eta is None:
            raise ValueError("scalar-eta models need eta")
        G = (1 - eta) * np.eye(n)
        if model == "approx":
            Rzbar, Rqq = bussgang_covariances(Rzz, Rrr, eta)
        else:
            Rzbar, Rqq = low_snr_covariances(scenario.sigma2, n, eta)
    else:
        raise ValueError(f"unknown covariance model {model!r}")
    return CovarianceBundle(Rxx, Rzz, Rrr, G, Rzbar, Rqq, model)


# ---------------------------------------------------------------------------
# rate bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateBound:
    bits: float
    model: str

    def __float__(self) -> float:
        return self.bits


def _logdet2(M) -> float:
    sign, ld = np.linalg.slogdet(M)
    if sign.real <= 0:
        raise np.linalg.LinAlgError("log-det argument is not positive definite")
    return float(ld / np.log(2))


def rate_lower_bound(
    R_xx,
    sigma2: float,
    eta: float = 0.0,
    model: str = "general",
    R_rr=None,
    R_zbar=None,
    R_zz=None,
) -> RateBound:
    """Uplink mutual-information lower bound in bits per vector use.

    general       log2|I + R_zbar^{-1} (1-eta)^2 R_xx| with the scalar-eta
                  R_zbar (built from ``R_rr``, default R_xx + sigma^2 I)
    low-snr       log2|I + (1-eta)/sigma^2 R_xx|
    1bit-low-snr  tr(R_xx D^{-1/2} [arcsin(D^{-1/2} R_zz D^{-1/2})]^{-1} D^{-1/2}),
                  which reduces to 2/(pi sigma^2) tr(R_xx) for white noise
    trace         (1-eta)/sigma^2 tr(R_xx), the linear surrogate used in the SDPs
    """
    R_xx = np.asarray(R_xx)
    n = R_xx.shape[0]
    I = np.eye(n)
    if model == "general":
        if R_zbar is None:
            R_rr = R_xx + sigma2 * I if R_rr is None else np.asarray(R_rr)
            R_zbar, _ = bussgang_covariances(sigma2 * I if R_zz is None else R_zz, R_rr, eta)
        try:
            M = I + np.linalg.solve(R_zbar, (1 - eta) ** 2 * R_xx)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular effective-noise covariance") from exc
        bits = _logdet2(M)
    elif model == "low-snr":
        bits = _logdet2(I + (1 - eta) / sigma2 * R_xx)
    elif model == "1bit-low-snr":
        R_zz = sigma2 * I if R_zz is None else np.asarray(R_zz)
        C, dinv = _correlation(R_zz)
        A = _complex_arcsin(C)
        inner = dinv[:, None] * np.linalg.inv(A) * dinv[None, :]
        bits = float(np.real(np.trace(R_xx @ inner)))
    elif model == "trace":
        bits = float((1 - eta) / sigma2 * np.real(np.trace(R_xx)))
    else:
        raise ValueError(f"unknown rate model {model!r}; expected one of {RATE_MODELS}")
    return RateBound(max(bits, 0.0), model)


def shannon_rate(R_xx, sigma2: float) -> float:
    """Unquantized log2|I + R_xx / sigma^2|."""
    R_xx = np.asarray(R_xx)
    return _logdet2(np.eye(R_xx.shape[0]) + R_xx / sigma2)


def rate_to_throughput(bits_per_use: float, frame: FrameConfig) -> float:
    """kbps assuming one vector use per symbol duration 1/df."""
    if frame.subcarrier_spacing_hz <= 0:
        raise ValueError("subcarrier spacing must be positive")
    return float(bits_per_use) * frame.subcarrier_spacing_hz / 1000.0


# ---------------------------------------------------------------------------
# low-SNR FIM bound on the target angles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AoaFimBound:
    """F_ij = scale * Re[tr(R0 M0[i,j]) + sum_k tr(R_k Mk[k][i,j])].

    ``bs_blocks`` has shape (P, P, N, N) and ``user_blocks[k]`` (P, P, Nk, Nk);
    each block is already summed over antennas, symbols and subcarriers and
    weighted by the stream power.
    """

    matrix: np.ndarray
    bs_blocks: np.ndarray
    user_blocks: tuple[np.ndarray, ...]
    scale: float
    eta: float
    assumes_low_snr: bool = True

    def evaluate(self, R0, Rks) -> np.ndarray:
        F = np.einsum("pq,ijqp->ij", np.asarray(R0), self.bs_blocks)
        for Rk, M in zip(Rks, self.user_blocks):
            F = F + np.einsum("pq,ijqp->ij", np.asarray(Rk), M)
        F = self.scale * np.real(F)
        return 0.5 * (F + F.T)

    def crb(self, R0, Rks, target: int = 0) -> float:
        """[F^{-1}]_ii of the angle block."""
        F = self.evaluate(R0, Rks)
        return float(np.linalg.inv(F)[target, target])


def _bs_rows(scenario: ScenarioConfig, i: int, v: int) -> np.ndarray:
    """A^i_{n,l,m} rows stacked as (L, |C0|, N, N)."""
    fr, ar = scenario.frame, scenario.arrays
    N, d = ar.bs_antennas, ar.element_spacing_wavelengths
    t = scenario.targets[i]
    a, da = steering_vector(t.aoa_rad, N, d), steering_derivative(t.aoa_rad, N, d)
    gam = t.complex_gain * doppler_phase(t.doppler_hz, fr)
    c = subcarrier_phase(fr.dl_subcarriers, 2 * t.one_way_delay_s, v, fr)
    rows = np.outer(da, a) + np.outer(a, da)
    return (gam[:, None] * c[None, :])[:, :, None, None] * rows


def _user_rows(scenario: ScenarioConfig, k: int, i: int, v: int) -> np.ndarray | None:
    """B^{k,i}_{n,l,m} rows stacked as (L, |Ck|, N, Nk); None if k does not see i."""
    fr, ar = scenario.frame, scenario.arrays
    N, d = ar.bs_antennas, ar.element_spacing_wavelengths
    u = scenario.users[k]
    path = next((p for p in u.reflected_paths if p.target_index == i), None)
    if path is None:
        return None
    t = scenario.targets[i]
    da = steering_derivative(t.aoa_rad, N, d)
    au = steering_vector(path.aod_to_target_rad, ar.user_antennas[k], d)
    gam = path.complex_gain * doppler_phase(t.doppler_hz, fr)
    c = subcarrier_phase(fr.ul_subcarriers[k], path.delay_s, v, fr)
    return (gam[:, None] * c[None, :])[:, :, None, None] * np.outer(da, au)


def fim_lower_bound(
    scenario: ScenarioConfig,
    R0,
    Rks,
    eta: float,
    mask=None,
    v: int | None = None,
) -> AoaFimBound:
    """Low-SNR Bussgang lower bound on the FIM of the target angles.

    ``mask[k][i]`` (optional, bool) drops the reflected path of user k via
    target i, e.g. when it falls below the ADC's dynamic range.
    """
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    fr = scenario.frame
    v = fr.sample_index if v is None else v
    P, K, N = scenario.num_targets, scenario.num_users, scenario.n_bs
    A = [_bs_rows(scenario, i, v) for i in range(P)]
    M0 = np.zeros((P, P, N, N), dtype=complex)
    for i in range(P):
        for j in range(P):
            M0[i, j] = fr.symbol_power[0] * np.einsum("lmnp,lmnq->pq", A[i].conj(), A[j])
    Mk = []
    for k in range(K):
        Nk = scenario.arrays.user_antennas[k]
        B = [
            None if (mask is not None and not mask[k][i]) else _user_rows(scenario, k, i, v)
            for i in range(P)
        ]
        M = np.zeros((P, P, Nk, Nk), dtype=complex)
        for i in range(P):
            for j in range(P):
                if B[i] is not None and B[j] is not None:
                    M[i, j] = fr.symbol_power[k + 1] * np.einsum("lmnp,lmnq->pq", B[i].conj(), B[j])
        Mk.append(M)
    scale = 2 * (1 - eta) / scenario.sigma2
    bound = AoaFimBound(np.zeros((P, P)), M0, tuple(Mk), scale, eta)
    return AoaFimBound(bound.evaluate(R0, Rks), M0, tuple(Mk), scale, eta)


def fim_bound_from_derivatives(jac_theta, sigma2: float, eta: float) -> np.ndarray:
    """2(1-eta)/sigma^2 Re sum conj(dx_i) dx_j from explicit derivatives (P, L, N)."""
    J = np.asarray(jac_theta)
    F = 2 * (1 - eta) / sigma2 * np.real(np.einsum("iln,jln->ij", J.conj(), J))
    return 0.5 * (F + F.T)
