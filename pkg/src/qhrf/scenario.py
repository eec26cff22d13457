"""Geometry, OFDM frame, antenna arrays and channel matrices.

Everything here is an immutable value. A :class:`ScenarioConfig` holds the
per-path angles, delays, Doppler shifts and complex gains; the helpers at the
bottom derive those quantities from 2-D positions with a free-space / radar
equation pathloss model.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .quantizer import signal_dynamic_range_db

SPEED_OF_LIGHT = 299_792_458.0


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameConfig:
    """OFDM frame: carrier, subcarrier allocation and per-stream symbol power.

    ``symbol_power[0]`` is the downlink stream, ``symbol_power[k]`` user k.
    """

    carrier_freq_hz: float = 24e9
    subcarrier_spacing_hz: float = 15e3
    num_symbols: int = 14
    samples_per_symbol: int = 64
    dl_subcarriers: tuple[int, ...] = tuple(range(36))
    ul_subcarriers: tuple[tuple[int, ...], ...] = (tuple(range(36, 60)),)
    symbol_power: tuple[float, ...] = (1.0, 1.0)
    sample_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dl_subcarriers", tuple(int(m) for m in self.dl_subcarriers))
        object.__setattr__(
            self, "ul_subcarriers", tuple(tuple(int(m) for m in s) for s in self.ul_subcarriers)
        )
        object.__setattr__(self, "symbol_power", tuple(float(p) for p in self.symbol_power))
        if self.num_symbols < 1 or self.samples_per_symbol < 1:
            raise ValueError("num_symbols and samples_per_symbol must be >= 1")
        if self.subcarrier_spacing_hz <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if len(self.symbol_power) != len(self.ul_subcarriers) + 1:
            raise ValueError("symbol_power needs one entry per stream (DL + each user)")
        if any(p <= 0 for p in self.symbol_power):
            raise ValueError("symbol powers must be positive")
        overlap = subcarrier_overlap(self.dl_subcarriers, self.ul_subcarriers)
        if overlap:
            raise ValueError(f"subcarrier sets overlap at indices {overlap}")
        if any(m < 0 for m in self.dl_subcarriers) or any(m < 0 for s in self.ul_subcarriers for m in s):
            raise ValueError("subcarrier indices must be non-negative")

    @property
    def num_users(self) -> int:
        return len(self.ul_subcarriers)

    @property
    def symbol_duration_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz


def subcarrier_overlap(dl: Sequence[int], ul: Sequence[Sequence[int]]) -> list[int]:
    """Indices that appear in more than one of the DL/UL subcarrier sets."""
    seen: dict[int, int] = {}
    for s in [dl, *ul]:
        for m in set(s):
            seen[m] = seen.get(m, 0) + 1
    return sorted(m for m, c in seen.items() if c > 1)


def default_frame(num_users: int = 1, dl_count: int = 36, ul_count: int = 24, **kw) -> FrameConfig:
    """Frame with contiguous DL block followed by one UL block per user."""
    dl = tuple(range(dl_count))
    ul = tuple(tuple(range(dl_count + k * ul_count, dl_count + (k + 1) * ul_count)) for k in range(num_users))
    kw.setdefault("symbol_power", (1.0,) * (num_users + 1))
    return FrameConfig(dl_subcarriers=dl, ul_subcarriers=ul, **kw)


@dataclass(frozen=True)
class ArrayConfig:
    bs_antennas: int = 8
    user_antennas: tuple[int, ...] = (4,)
    element_spacing_wavelengths: float = 0.5
    bs_gain_dbi: float = 25.0
    user_gain_dbi: float = 17.0

    def __post_init__(self):
        object.__setattr__(self, "user_antennas", tuple(int(n) for n in self.user_antennas))
        if self.bs_antennas < 1 or any(n < 1 for n in self.user_antennas):
            raise ValueError("antenna counts must be >= 1")
        if self.element_spacing_wavelengths <= 0:
            raise ValueError("element spacing must be positive")


@dataclass(frozen=True)
class TargetState:
    aoa_rad: float
    one_way_delay_s: float
    doppler_hz: float = 0.0
    complex_gain: complex = 1.0

    def __post_init__(self):
        if self.one_way_delay_s < 0:
            raise ValueError("target delay must be non-negative")
        if abs(self.aoa_rad) > np.pi / 2 + 1e-12:
            raise ValueError("target AoA must lie in [-pi/2, pi/2]")


@dataclass(frozen=True)
class ReflectedPath:
    target_index: int
    delay_s: float
    aod_to_target_rad: float
    complex_gain: complex


@dataclass(frozen=True)
class UserState:
    aod_rad: float
    aoa_at_bs_rad: float
    delay_s: float
    complex_gain: complex
    reflected_paths: tuple[ReflectedPath, ...] = ()

    @property
    def visible_targets(self) -> tuple[int, ...]:
        return tuple(p.target_index for p in self.reflected_paths)


@dataclass(frozen=True)
class NoiseModel:
    """AWGN with total complex variance ``noise_variance`` per antenna sample."""

    noise_variance: float
    psd_dbm_per_hz: float | None = None

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")

    @classmethod
    def from_psd(cls, psd_dbm_per_hz: float, bandwidth_hz: float) -> "NoiseModel":
        var = 10 ** ((psd_dbm_per_hz - 30) / 10) * bandwidth_hz
        return cls(noise_variance=var, psd_dbm_per_hz=psd_dbm_per_hz)


@dataclass(frozen=True)
class ScenarioConfig:
    frame: FrameConfig
    arrays: ArrayConfig
    targets: tuple[TargetState, ...]
    users: tuple[UserState, ...]
    noise: NoiseModel
    bs_power_max_w: float = 1.0
    user_power_max_w: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "users", tuple(self.users))
        K = len(self.users)
        if self.frame.num_users != K:
            raise ValueError(f"frame allocates {self.frame.num_users} users, scenario has {K}")
        if len(self.arrays.user_antennas) != K:
            raise ValueError(f"{len(self.arrays.user_antennas)} user antenna counts for {K} users")
        P = len(self.targets)
        for k, u in enumerate(self.users):
            vis = u.visible_targets
            if len(set(vis)) != len(vis) or any(not 0 <= j < P for j in vis):
                raise ValueError(f"user {k}: invalid visible target set {vis}")
            for p in u.reflected_paths:
                if p.delay_s < u.delay_s - 1e-15:
                    raise ValueError(f"user {k}: reflected path delay shorter than direct path")
        if self.bs_power_max_w <= 0 or self.user_power_max_w <= 0:
            raise ValueError("power caps must be positive")

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def n_bs(self) -> int:
        return self.arrays.bs_antennas

    @property
    def sigma2(self) -> float:
        return self.noise.noise_variance

    def with_noise_variance(self, sigma2: float) -> "ScenarioConfig":
        return replace(self, noise=NoiseModel(noise_variance=sigma2))


# ---------------------------------------------------------------------------
# steering and phase factors
# ---------------------------------------------------------------------------

def steering_vector(theta: float, n_elems: int, spacing: float = 0.5) -> np.ndarray:
    """ULA response with the phase reference on the first element."""
    n = np.arange(n_elems)
    return np.exp(2j * np.pi * spacing * n * np.sin(theta))


def steering_derivative(theta: float, n_elems: int, spacing: float = 0.5) -> np.ndarray:
    """d/dtheta of :func:`steering_vector`."""
    n = np.arange(n_elems)
    return 2j * np.pi * spacing * n * np.cos(theta) * steering_vector(theta, n_elems, spacing)


def subcarrier_phase(m, tau: float, v: int, frame: FrameConfig):
    """exp(-j2pi((m df + fc) tau - m v / M)); ``m`` may be an array."""
    m = np.asarray(m, dtype=float)
    df, fc, M = frame.subcarrier_spacing_hz, frame.carrier_freq_hz, frame.samples_per_symbol
    return np.exp(-2j * np.pi * ((m * df + fc) * tau - m * v / M))


def doppler_phase(f_d: float, frame: FrameConfig) -> np.ndarray:
    """exp(j2pi f_D l T) for l = 0..L-1."""
    ell = np.arange(frame.num_symbols)
    return np.exp(2j * np.pi * f_d * ell * frame.symbol_duration_s)


# ---------------------------------------------------------------------------
# channel matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelSet:
    """Dense channel matrices at one sample index.

    ``echo[i]`` has shape (L, |C0|, N, N); ``direct[k]`` (L, |Ck|, N, Nk);
    ``reflected[k][q]`` is the q-th reflected path of user k, same shape as
    ``direct[k]``.
    """

    echo: tuple[np.ndarray, ...]
    direct: tuple[np.ndarray, ...]
    reflected: tuple[tuple[np.ndarray, ...], ...]
    sample_index: int = 0

    def uplink(self, k: int) -> np.ndarray:
        """Composite UL channel: direct path plus every reflected path."""
        h = self.direct[k].copy()
        for hr in self.reflected[k]:
            h += hr
        return h


def build_channels(scenario: ScenarioConfig, v: int | None = None) -> ChannelSet:
    fr, ar = scenario.frame, scenario.arrays
    v = fr.sample_index if v is None else v
    N, d = ar.bs_antennas, ar.element_spacing_wavelengths
    L = fr.num_symbols
    dl = np.asarray(fr.dl_subcarriers)

    echo = []
    for t in scenario.targets:
        a = steering_vector(t.aoa_rad, N, d)
        outer = np.outer(a, a)
        coef = t.complex_gain * doppler_phase(t.doppler_hz, fr)[:, None] * subcarrier_phase(
            dl, 2 * t.one_way_delay_s, v, fr
        )[None, :]
        echo.append(coef[:, :, None, None] * outer)

    direct, reflected = [], []
    for k, u in enumerate(scenario.users):
        Nk = ar.user_antennas[k]
        ul = np.asarray(fr.ul_subcarriers[k])
        outer = np.outer(steering_vector(u.aoa_at_bs_rad, N, d), steering_vector(u.aod_rad, Nk, d))
        coef = u.complex_gain * subcarrier_phase(ul, u.delay_s, v, fr)
        direct.append(np.broadcast_to(coef[None, :, None, None] * outer, (L, len(ul), N, Nk)).copy())
        paths = []
        for p in u.reflected_paths:
            tgt = scenario.targets[p.target_index]
            outer = np.outer(
                steering_vector(tgt.aoa_rad, N, d), steering_vector(p.aod_to_target_rad, Nk, d)
            )
            coef = p.complex_gain * doppler_phase(tgt.doppler_hz, fr)[:, None] * subcarrier_phase(
                ul, p.delay_s, v, fr
            )[None, :]
            paths.append(coef[:, :, None, None] * outer)
        reflected.append(tuple(paths))
    return ChannelSet(tuple(echo), tuple(direct), tuple(reflected), v)


# ---------------------------------------------------------------------------
# pathloss and geometry
# ---------------------------------------------------------------------------

def db_to_lin(db: float) -> float:
    return 10.0 ** (db / 10.0)


def friis_amplitude(distance_m: float, wavelength_m: float, g_tx_dbi: float, g_rx_dbi: float) -> float:
    """One-way free-space amplitude gain (power falls as 1/d^2)."""
    if distance_m <= 0:
        raise ValueError("distance must be positive")
    gain = db_to_lin(g_tx_dbi + g_rx_dbi)
    return float(np.sqrt(gain) * wavelength_m / (4 * np.pi * distance_m))


def radar_amplitude(
    d_tx_m: float, d_rx_m: float, wavelength_m: float, g_tx_dbi: float, g_rx_dbi: float, rcs_m2: float = 1.0
) -> float:
    """Bistatic radar-equation amplitude; monostatic when ``d_tx_m == d_rx_m``."""
    if d_tx_m <= 0 or d_rx_m <= 0:
        raise ValueError("distance must be positive")
    gain = db_to_lin(g_tx_dbi + g_rx_dbi)
    p = gain * wavelength_m**2 * rcs_m2 / ((4 * np.pi) ** 3 * d_tx_m**2 * d_rx_m**2)
    return float(np.sqrt(p))


@dataclass(frozen=True)
class PathGains:
    target: tuple[float, ...]
    direct: tuple[float, ...]
    reflected: tuple[tuple[float, ...], ...]


def pathloss_and_gains(
    bs_to_target_m: Sequence[float],
    bs_to_user_m: Sequence[float],
    user_to_target_m: Sequence[Sequence[float]],
    wavelength_m: float,
    arrays: ArrayConfig,
    rcs_m2: float = 1.0,
) -> PathGains:
    """Amplitude gains of every path.

    ``user_to_target_m[k][j]`` is the distance from user k to target j.
    """
    gb, gu = arrays.bs_gain_dbi, arrays.user_gain_dbi
    tg = tuple(radar_amplitude(d, d, wavelength_m, gb, gb, rcs_m2) for d in bs_to_target_m)
    dg = tuple(friis_amplitude(d, wavelength_m, gu, gb) for d in bs_to_user_m)
    rg = tuple(
        tuple(radar_amplitude(dut, dt, wavelength_m, gu, gb, rcs_m2) for dut, dt in zip(row, bs_to_target_m))
        for row in user_to_target_m
    )
    return PathGains(tg, dg, rg)


def _wrap_half_plane(angle: float) -> float:
    # a ULA sees theta and pi - theta identically; fold into [-pi/2, pi/2]
    a = (angle + np.pi) % (2 * np.pi) - np.pi
    if a > np.pi / 2:
        a = np.pi - a
    elif a < -np.pi / 2:
        a = -np.pi - a
    return float(a)


def _polar(r: float, ang: float) -> np.ndarray:
    # BS at origin, broadside along +x
    return np.array([r * np.cos(ang), r * np.sin(ang)])


def scenario_from_geometry(
    target_polar: Sequence[tuple[float, float]],
    user_polar: Sequence[tuple[float, float]],
    frame: FrameConfig | None = None,
    arrays: ArrayConfig | None = None,
    noise_psd_dbm_per_hz: float = -174.0,
    bs_power_max_dbm: float = 30.0,
    user_power_max_dbm: float = 20.0,
    rcs_m2: float = 1.0,
    doppler_hz: Sequence[float] | None = None,
    visibility: Sequence[Sequence[int]] | None = None,
) -> ScenarioConfig:
    """Build a scenario from (distance_m, angle_rad) pairs relative to the BS.

    Each user array faces the BS, so the direct-path AoD is zero. By default
    every user sees every target.
    """
    K = len(user_polar)
    frame = frame or default_frame(K)
    arrays = arrays or ArrayConfig(user_antennas=(4,) * K)
    lam = frame.wavelength_m
    tpos = [_polar(r, a) for r, a in target_polar]
    upos = [_polar(r, a) for r, a in user_polar]
    d_bt = [float(np.linalg.norm(p)) for p in tpos]
    d_bu = [float(np.linalg.norm(p)) for p in upos]
    d_ut = [[float(np.linalg.norm(t - u)) for t in tpos] for u in upos]
    gains = pathloss_and_gains(d_bt, d_bu, d_ut, lam, arrays, rcs_m2)
    doppler_hz = doppler_hz or [0.0] * len(tpos)
    if visibility is None:
        visibility = [list(range(len(tpos)))] * K

    targets = tuple(
        TargetState(
            aoa_rad=_wrap_half_plane(np.arctan2(p[1], p[0])),
            one_way_delay_s=d / SPEED_OF_LIGHT,
            doppler_hz=fd,
            complex_gain=complex(g),
        )
        for p, d, fd, g in zip(tpos, d_bt, doppler_hz, gains.target)
    )
    users = []
    for k, u in enumerate(upos):
        to_bs = -u
        base = np.arctan2(to_bs[1], to_bs[0])
        paths = []
        for j in visibility[k]:
            vec = tpos[j] - u
            aod = _wrap_half_plane(np.arctan2(vec[1], vec[0]) - base)
            paths.append(
                ReflectedPath(
                    target_index=j,
                    delay_s=(d_ut[k][j] + d_bt[j]) / SPEED_OF_LIGHT,
                    aod_to_target_rad=aod,
                    complex_gain=complex(gains.reflected[k][j]),
                )
            )
        users.append(
            UserState(
                aod_rad=0.0,
                aoa_at_bs_rad=_wrap_half_plane(np.arctan2(u[1], u[0])),
                delay_s=d_bu[k] / SPEED_OF_LIGHT,
                complex_gain=complex(gains.direct[k]),
                reflected_paths=tuple(paths),
            )
        )
    noise = NoiseModel.from_psd(noise_psd_dbm_per_hz, frame.subcarrier_spacing_hz)
    return ScenarioConfig(
        frame=frame,
        arrays=arrays,
        targets=targets,
        users=tuple(users),
        noise=noise,
        bs_power_max_w=db_to_lin(bs_power_max_dbm - 30),
        user_power_max_w=db_to_lin(user_power_max_dbm - 30),
    )


def default_scenario(target_distance_m: float = 100.0, target_angle_deg: float = 50.0, **kw) -> ScenarioConfig:
    """One user at 100 m broadside and one target, 24 GHz, N=8, Nu=4."""
    return scenario_from_geometry(
        [(target_distance_m, np.deg2rad(target_angle_deg))], [(100.0, 0.0)], **kw
    )


def uplink_dynamic_range_db(scenario: ScenarioConfig, k: int, q: int) -> float:
    """Direct-to-reflected power ratio (dB) for user k's q-th reflected path.

    Uses path gains only, so it does not depend on the precoders.
    """
    u = scenario.users[k]
    p_dp = abs(u.complex_gain) ** 2
    p_ref = abs(u.reflected_paths[q].complex_gain) ** 2
    return signal_dynamic_range_db(p_dp, p_ref)
