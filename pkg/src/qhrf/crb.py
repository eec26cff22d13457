"""Exact quantized and infinite-resolution Fisher information, and CRBs.

The unknowns are every angle, delay, Doppler shift and (real/imaginary)
complex gain of the scenario. :func:`jacobian` returns the analytic
derivative of the noiseless samples x_{n,l} with respect to each of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr

from .quantizer import QuantizerSpec, cell_probability, normal_pdf
from .scenario import (
    ReflectedPath,
    ScenarioConfig,
    build_channels,
    doppler_phase,
    steering_derivative,
    steering_vector,
)
from .signal import PrecoderSet, Symbols, synthesize_noiseless

TARGET_FAMILIES = ("theta_tar", "doppler", "tau_tar", "g_tar_re", "g_tar_im")
USER_FAMILIES = ("theta_r_user", "theta_user", "tau_user", "g_dp_re", "g_dp_im")
PATH_FAMILIES = ("phi", "theta_ref", "g_ref_re", "g_ref_im")
FAMILIES = TARGET_FAMILIES + USER_FAMILIES + PATH_FAMILIES

UNITS = {
    "theta_tar": "rad", "theta_r_user": "rad", "theta_user": "rad", "theta_ref": "rad",
    "doppler": "Hz", "tau_tar": "s", "tau_user": "s", "phi": "s",
}

PROB_FLOOR = 1e-300
DEFAULT_CONDITION_CAP = 1e12


class SingularFimError(np.linalg.LinAlgError):
    """Raised when the FIM is too ill-conditioned to invert."""

    def __init__(self, message, condition_number=np.inf, unidentifiable=()):
        super().__init__(message)
        self.condition_number = condition_number
        self.unidentifiable = tuple(unidentifiable)


# ---------------------------------------------------------------------------
# parameter vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamEntry:
    family: str
    owner: tuple[int, ...]  # (i,) target, (k,) user, (k, j) reflected path via target j

    @property
    def name(self) -> str:
        return f"{self.family}[{','.join(map(str, self.owner))}]"

    @property
    def unit(self) -> str:
        return UNITS.get(self.family, "amplitude")


class ParameterVector:
    """Ordered unknowns with a name <-> index map.

    Order: per target (theta, f_D, tau, Re g, Im g), per user (theta_r, theta,
    tau, Re g, Im g), then per reflected path (phi, theta, Re g, Im g).
    """

    def __init__(self, entries: Sequence[ParamEntry]):
        self.entries = tuple(entries)
        self.index = {e.name: i for i, e in enumerate(self.entries)}
        if len(self.index) != len(self.entries):
            raise ValueError("duplicate parameter names")

    @classmethod
    def from_scenario(cls, scenario: ScenarioConfig) -> "ParameterVector":
        ent = [ParamEntry(f, (i,)) for i in range(scenario.num_targets) for f in TARGET_FAMILIES]
        ent += [ParamEntry(f, (k,)) for k in range(scenario.num_users) for f in USER_FAMILIES]
        ent += [
            ParamEntry(f, (k, p.target_index))
            for k, u in enumerate(scenario.users)
            for p in u.reflected_paths
            for f in PATH_FAMILIES
        ]
        return cls(ent)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def indices(self, which: Iterable[str | int] | str | None = None) -> list[int]:
        """Resolve names, family names or integer indices to positions."""
        if which is None:
            return list(range(len(self)))
        if isinstance(which, (str, int)):
            which = [which]
        out = []
        for w in which:
            if isinstance(w, (int, np.integer)):
                if not 0 <= w < len(self):
                    raise IndexError(f"parameter index {w} out of range")
                out.append(int(w))
            elif w in self.index:
                out.append(self.index[w])
            elif w in FAMILIES:
                out.extend(i for i, e in enumerate(self.entries) if e.family == w)
            else:
                raise KeyError(f"unknown parameter {w!r}")
        return out

    def values(self, scenario: ScenarioConfig) -> np.ndarray:
        return np.array([_get(scenario, e) for e in self.entries])

    def apply(self, scenario: ScenarioConfig, values) -> ScenarioConfig:
        """Scenario with every entry replaced by ``values``."""
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self),):
            raise ValueError(f"expected {len(self)} values")
        targets = [dict(vars(t)) for t in scenario.targets]
        users = [dict(vars(u)) for u in scenario.users]
        paths = [[dict(vars(p)) for p in u.reflected_paths] for u in scenario.users]
        for e, val in zip(self.entries, values):
            f = e.family
            if f in TARGET_FAMILIES:
                t = targets[e.owner[0]]
                key = {"theta_tar": "aoa_rad", "doppler": "doppler_hz", "tau_tar": "one_way_delay_s"}.get(f)
                if key:
                    t[key] = val
                else:
                    _set_gain(t, "complex_gain", f.endswith("_re"), val)
            elif f in USER_FAMILIES:
                u = users[e.owner[0]]
                key = {"theta_r_user": "aoa_at_bs_rad", "theta_user": "aod_rad", "tau_user": "delay_s"}.get(f)
                if key:
                    u[key] = val
                else:
                    _set_gain(u, "complex_gain", f.endswith("_re"), val)
            else:
                k, j = e.owner
                p = next(p for p in paths[k] if p["target_index"] == j)
                key = {"phi": "delay_s", "theta_ref": "aod_to_target_rad"}.get(f)
                if key:
                    p[key] = val
                else:
                    _set_gain(p, "complex_gain", f.endswith("_re"), val)
        new_targets = tuple(type(t0)(**t) for t0, t in zip(scenario.targets, targets))
        new_users = tuple(
            type(u0)(**{**u, "reflected_paths": tuple(ReflectedPath(**p) for p in ps)})
            for u0, u, ps in zip(scenario.users, users, paths)
        )
        # skip the delay-ordering check: finite-difference steps may cross it
        out = object.__new__(ScenarioConfig)
        out.__dict__.update(vars(scenario), targets=new_targets, users=new_users)
        return out


def _set_gain(d, key, real, val):
    g = complex(d[key])
    d[key] = complex(val, g.imag) if real else complex(g.real, val)


def _get(scenario, e: ParamEntry) -> float:
    f = e.family
    if f in TARGET_FAMILIES:
        t = scenario.targets[e.owner[0]]
        return {
            "theta_tar": t.aoa_rad, "doppler": t.doppler_hz, "tau_tar": t.one_way_delay_s,
            "g_tar_re": complex(t.complex_gain).real, "g_tar_im": complex(t.complex_gain).imag,
        }[f]
    if f in USER_FAMILIES:
        u = scenario.users[e.owner[0]]
        return {
            "theta_r_user": u.aoa_at_bs_rad, "theta_user": u.aod_rad, "tau_user": u.delay_s,
            "g_dp_re": complex(u.complex_gain).real, "g_dp_im": complex(u.complex_gain).imag,
        }[f]
    k, j = e.owner
    p = next(p for p in scenario.users[k].reflected_paths if p.target_index == j)
    return {
        "phi": p.delay_s, "theta_ref": p.aod_to_target_rad,
        "g_ref_re": complex(p.complex_gain).real, "g_ref_im": complex(p.complex_gain).imag,
    }[f]


# ---------------------------------------------------------------------------
# analytic derivatives
# ---------------------------------------------------------------------------

def _phase_sums(symbols_lm, subcarriers, tau, v, frame):
    """sum_m b[l,m] c_m(tau) and its derivative in tau, both shape (L,)."""
    m = np.asarray(subcarriers, dtype=float)
    df, fc, M = frame.subcarrier_spacing_hz, frame.carrier_freq_hz, frame.samples_per_symbol
    c = np.exp(-2j * np.pi * ((m * df + fc) * tau - m * v / M))
    w = symbols_lm * c[None, :]
    return w.sum(axis=1), (w * (-2j * np.pi * (m * df + fc))[None, :]).sum(axis=1)


def jacobian(
    scenario: ScenarioConfig,
    precoders: PrecoderSet,
    symbols: Symbols,
    params: ParameterVector | None = None,
    v: int | None = None,
) -> np.ndarray:
    """d x_{n,l} / d psi_i for every entry, shape (D, L, N)."""
    params = params or ParameterVector.from_scenario(scenario)
    fr, ar = scenario.frame, scenario.arrays
    v = fr.sample_index if v is None else v
    N, d = ar.bs_antennas, ar.element_spacing_wavelengths
    L = fr.num_symbols
    f = precoders.bs_precoder
    fks = precoders.user_precoders
    if f is None or fks is None:
        raise ValueError("derivatives need precoder vectors")
    ellT = 2j * np.pi * np.arange(L) * fr.symbol_duration_s
    J = np.zeros((len(params), L, N), dtype=complex)
    idx = params.index

    def put(name, val):
        i = idx.get(name)
        if i is not None:
            J[i] += val

    for i, t in enumerate(scenario.targets):
        g = complex(t.complex_gain)
        a, da = steering_vector(t.aoa_rad, N, d), steering_derivative(t.aoa_rad, N, d)
        u, du = _phase_sums(symbols.dl, fr.dl_subcarriers, 2 * t.one_way_delay_s, v, fr)
        du = 2 * du  # round-trip delay
        dop = doppler_phase(t.doppler_hz, fr)
        at_f, dat_f = a @ f, da @ f
        base = (dop * u)[:, None] * a[None, :] * at_f  # x with unit gain
        put(f"theta_tar[{i}]", g * (dop * u)[:, None] * (da * at_f + a * dat_f)[None, :])
        put(f"doppler[{i}]", g * ellT[:, None] * base)
        put(f"tau_tar[{i}]", g * (dop * du)[:, None] * a[None, :] * at_f)
        put(f"g_tar_re[{i}]", base)
        put(f"g_tar_im[{i}]", 1j * base)

    for k, usr in enumerate(scenario.users):
        Nk = ar.user_antennas[k]
        fk = fks[k]
        g = complex(usr.complex_gain)
        ar_, dar = steering_vector(usr.aoa_at_bs_rad, N, d), steering_derivative(usr.aoa_at_bs_rad, N, d)
        au, dau = steering_vector(usr.aod_rad, Nk, d), steering_derivative(usr.aod_rad, Nk, d)
        u, du = _phase_sums(symbols.ul[k], fr.ul_subcarriers[k], usr.delay_s, v, fr)
        base = u[:, None] * ar_[None, :] * (au @ fk)
        put(f"theta_r_user[{k}]", g * u[:, None] * dar[None, :] * (au @ fk))
        put(f"theta_user[{k}]", g * u[:, None] * ar_[None, :] * (dau @ fk))
        put(f"tau_user[{k}]", g * du[:, None] * ar_[None, :] * (au @ fk))
        put(f"g_dp_re[{k}]", base)
        put(f"g_dp_im[{k}]", 1j * base)

        for p in usr.reflected_paths:
            j = p.target_index
            tgt = scenario.targets[j]
            g = complex(p.complex_gain)
            a, da = steering_vector(tgt.aoa_rad, N, d), steering_derivative(tgt.aoa_rad, N, d)
            au, dau = steering_vector(p.aod_to_target_rad, Nk, d), steering_derivative(p.aod_to_target_rad, Nk, d)
            u, du = _phase_sums(symbols.ul[k], fr.ul_subcarriers[k], p.delay_s, v, fr)
            dop = doppler_phase(tgt.doppler_hz, fr)
            base = (dop * u)[:, None] * a[None, :] * (au @ fk)
            put(f"theta_tar[{j}]", g * (dop * u)[:, None] * da[None, :] * (au @ fk))
            put(f"doppler[{j}]", g * ellT[:, None] * base)
            put(f"phi[{k},{j}]", g * (dop * du)[:, None] * a[None, :] * (au @ fk))
            put(f"theta_ref[{k},{j}]", g * (dop * u)[:, None] * a[None, :] * (dau @ fk))
            put(f"g_ref_re[{k},{j}]", base)
            put(f"g_ref_im[{k},{j}]", 1j * base)
    return J


def partial_derivatives(
    params: ParameterVector,
    scenario: ScenarioConfig,
    precoders: PrecoderSet,
    symbols: Symbols,
    n: int,
    ell: int,
    v: int | None = None,
) -> np.ndarray:
    """Gradient of the single sample x_{n,l}; one complex value per entry."""
    N, L = scenario.n_bs, scenario.frame.num_symbols
    if not (0 <= n < N and 0 <= ell < L):
        raise IndexError("antenna or symbol index out of range")
    return jacobian(scenario, precoders, symbols, params, v)[:, ell, n]


def finite_difference_jacobian(
    scenario: ScenarioConfig,
    precoders: PrecoderSet,
    symbols: Symbols,
    params: ParameterVector | None = None,
    steps: dict | None = None,
) -> np.ndarray:
    """Fourth-order central differences of :func:`synthesize_noiseless`, (D, L, N).

    Default steps move the largest delay/Doppler phase by 1e-2 rad and the
    angles by 1e-3 rad; the weak reflected terms ride on a much larger direct
    path, so small steps would lose them to rounding.
    """
    params = params or ParameterVector.from_scenario(scenario)
    fr = scenario.frame
    f_max = fr.carrier_freq_hz + fr.subcarrier_spacing_hz * max(
        [*fr.dl_subcarriers, *(m for s in fr.ul_subcarriers for m in s), 1]
    )
    default = {
        "rad": 1e-3,
        "s": 1e-2 / (2 * np.pi * f_max * 2),
        "Hz": 1e-2 / (2 * np.pi * max(fr.num_symbols - 1, 1) * fr.symbol_duration_s),
    }
    steps = steps or {}
    base = params.values(scenario)

    def at(i, delta):
        vals = base.copy()
        vals[i] += delta
        return synthesize_noiseless(build_channels(params.apply(scenario, vals)), precoders, symbols)

    out = np.empty((len(params), fr.num_symbols, scenario.n_bs), dtype=complex)
    for i, e in enumerate(params.entries):
        if e.unit == "amplitude":
            # x is linear in the gains, so any step is exact up to rounding
            h = steps.get(e.family, 1e-3 * (abs(base[i]) or 1.0))
        else:
            h = steps.get(e.family, default[e.unit])
        out[i] = (8 * (at(i, h) - at(i, -h)) - (at(i, 2 * h) - at(i, -2 * h))) / (12 * h)
    return out


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------

def quantizer_weight(x, spec: QuantizerSpec, sigma2: float) -> np.ndarray:
    """Per-cell weights Lambda_b for real component values ``x``.

    ``spec`` carries absolute thresholds; the real noise component has
    standard deviation sqrt(sigma2 / 2). Returns shape x.shape + (B,).
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    sd = np.sqrt(sigma2 / 2)
    x = np.asarray(x, dtype=float)[..., None]
    edges = spec.edges
    lo = (edges[:-1] - x) / sd
    hi = (edges[1:] - x) / sd
    p = cell_probability(lo, hi)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        num = np.square(normal_pdf(hi) - normal_pdf(lo))
        lam = np.where(p > PROB_FLOOR, num / np.where(p > PROB_FLOOR, p, 1.0), 0.0)
    return lam


def log_cell_probability(x, spec: QuantizerSpec, sigma2: float, cells) -> np.ndarray:
    """log P(component lands in ``cells``) given mean ``x``; tail safe."""
    sd = np.sqrt(sigma2 / 2)
    edges = spec.edges
    cells = np.asarray(cells)
    lo = (edges[cells] - x) / sd
    hi = (edges[cells + 1] - x) / sd
    # log(Phi(hi) - Phi(lo)) = log Phi(hi) + log1p(-exp(logPhi(lo) - logPhi(hi))), mirrored above 0
    upper = lo > 0
    a = np.where(upper, log_ndtr(-lo), log_ndtr(hi))
    b = np.where(upper, log_ndtr(-hi), log_ndtr(lo))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a + np.log1p(-np.exp(b - a))
    return np.where(np.isfinite(out), out, -745.0)


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    params: ParameterVector
    kind: str  # "exact-quantized" | "ideal" | "low-snr-bound"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", 0.5 * (m + m.T))

    def restrict(self, which) -> "FisherMatrix":
        """FIM of a sub-vector with the remaining parameters treated as known."""
        idx = self.params.indices(which)
        sub = ParameterVector([self.params.entries[i] for i in idx])
        return FisherMatrix(self.matrix[np.ix_(idx, idx)], sub, self.kind)


def received_component_std(scenario: ScenarioConfig, precoders: PrecoderSet) -> np.ndarray:
    """AGC scale per antenna: std of each real component of r, sqrt(diag(R_rr)/2)."""
    from .bussgang import received_covariance

    R = received_covariance(
        build_channels(scenario), precoders.bs_covariance, precoders.user_covariances,
        scenario.frame, scenario.sigma2, include_echo=True,
    )
    return np.sqrt(np.real(np.diag(R)) / 2)


def quantized_fim(
    scenario: ScenarioConfig,
    precoders: PrecoderSet,
    symbols: Symbols,
    spec: QuantizerSpec,
    params: ParameterVector | None = None,
    component_std=None,
    which=None,
) -> FisherMatrix:
    """Exact FIM of the quantized observations.

    The quantizer design in ``spec`` is rescaled per antenna to
    ``component_std`` (default: :func:`received_component_std`, i.e. an AGC
    matched to the average received power).
    """
    params = params or ParameterVector.from_scenario(scenario)
    sigma2 = scenario.sigma2
    J = jacobian(scenario, precoders, symbols, params)
    if which is not None:
        idx = params.indices(which)
        params = ParameterVector([params.entries[i] for i in idx])
        J = J[idx]
    x = synthesize_noiseless(build_channels(scenario), precoders, symbols)
    if component_std is None:
        component_std = received_component_std(scenario, precoders)
    component_std = np.broadcast_to(np.asarray(component_std, dtype=float), (scenario.n_bs,))
    unit = spec.scaled(1.0)
    wr = np.empty(x.shape)
    wi = np.empty(x.shape)
    for n in range(scenario.n_bs):
        sp = unit.scaled(component_std[n])
        wr[:, n] = quantizer_weight(x[:, n].real, sp, sigma2).sum(axis=-1)
        wi[:, n] = quantizer_weight(x[:, n].imag, sp, sigma2).sum(axis=-1)
    F = (2.0 / sigma2) * (
        np.einsum("iln,jln,ln->ij", J.real, J.real, wr) + np.einsum("iln,jln,ln->ij", J.imag, J.imag, wi)
    )
    return FisherMatrix(F, params, "exact-quantized")


def ideal_fim(
    scenario: ScenarioConfig,
    precoders: PrecoderSet,
    symbols: Symbols,
    params: ParameterVector | None = None,
    which=None,
) -> FisherMatrix:
    """FIM of the unquantized observations, (2/sigma^2) Re sum conj(dx_i) dx_j."""
    params = params or ParameterVector.from_scenario(scenario)
    J = jacobian(scenario, precoders, symbols, params)
    if which is not None:
        idx = params.indices(which)
        params = ParameterVector([params.entries[i] for i in idx])
        J = J[idx]
    F = (2.0 / scenario.sigma2) * np.real(np.einsum("iln,jln->ij", J.conj(), J))
    return FisherMatrix(F, params, "ideal")


@dataclass(frozen=True)
class CrbResult:
    values: np.ndarray
    names: tuple[str, ...]
    condition_number: float
    kind: str

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))


def normalized_condition_number(F: np.ndarray) -> float:
    d = np.sqrt(np.abs(np.diag(F)))
    if np.any(d == 0):
        return np.inf
    ev = np.linalg.eigvalsh(F / np.outer(d, d))
    return float(np.inf if ev[0] <= 0 else ev[-1] / ev[0])


def crb_from_fim(
    fim: FisherMatrix,
    which=None,
    nuisance: str = "unknown",
    condition_cap: float = DEFAULT_CONDITION_CAP,
) -> CrbResult:
    """Diagonal of F^{-1} at the requested parameters.

    ``nuisance="unknown"`` inverts the full FIM; ``"known"`` first restricts
    it to ``which`` so the other parameters are treated as known.
    """
    if nuisance not in ("unknown", "known"):
        raise ValueError("nuisance must be 'unknown' or 'known'")
    if nuisance == "known" and which is not None:
        fim = fim.restrict(which)
        which = None
    F = fim.matrix
    idx = fim.params.indices(which)
    cond = normalized_condition_number(F)
    if not cond <= condition_cap:
        raise SingularFimError(
            f"FIM condition number {cond:.3e} exceeds cap {condition_cap:.1e}",
            cond,
            _unidentifiable(F, fim.params),
        )
    d = np.sqrt(np.diag(F))
    Fn = F / np.outer(d, d)
    inv = np.linalg.inv(Fn) / np.outer(d, d)
    vals = np.diag(inv)[idx]
    return CrbResult(vals, tuple(fim.params.names[i] for i in idx), cond, fim.kind)


def _unidentifiable(F, params: ParameterVector) -> list[str]:
    d = np.sqrt(np.abs(np.diag(F)))
    names = [params.names[i] for i in np.flatnonzero(d == 0)]
    dd = np.where(d == 0, 1.0, d)
    w, V = np.linalg.eigh(F / np.outer(dd, dd))
    small = w < w[-1] / DEFAULT_CONDITION_CAP
    for col in np.flatnonzero(small):
        names += [params.names[i] for i in np.flatnonzero(np.abs(V[:, col]) > 0.1)]
    return sorted(set(names), key=params.names.index)


def crb_theta(fim: FisherMatrix, target: int = 0) -> float:
    """CRB of one target AoA with all other parameters known (1 / F_theta,theta)."""
    i = fim.params.index[f"theta_tar[{target}]"]
    return float(1.0 / fim.matrix[i, i])
