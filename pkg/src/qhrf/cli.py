"""Command-line entry point: JSON run configs in, CSV tables and a manifest out.

Verbs ``crb``, ``mse``, ``resonance``, ``boundary`` and ``minbits`` run one
study each; ``validate`` only checks a config. Every row of every table carries
the seed and the config hash, so a single row can be reproduced on its own.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

EXPERIMENTS = ("crb", "mse", "resonance", "boundary", "minbits")


class ConfigError(ValueError):
    """Raised with the full list of problems found in a config."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


# ---------------------------------------------------------------------------
# config blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetSpec:
    distance_m: float = 100.0
    angle_deg: float = 50.0
    doppler_hz: float = 0.0


@dataclass(frozen=True)
class UserSpec:
    distance_m: float = 100.0
    angle_deg: float = 0.0


@dataclass(frozen=True)
class ScenarioBlock:
    bs_antennas: int = 8
    user_antennas: tuple[int, ...] = (4,)
    element_spacing: float = 0.5
    bs_gain_dbi: float = 25.0
    user_gain_dbi: float = 17.0
    carrier_freq_hz: float = 24e9
    subcarrier_spacing_hz: float = 15e3
    num_symbols: int = 14
    dl_subcarriers: tuple[int, ...] = tuple(range(36))
    ul_subcarriers: tuple[tuple[int, ...], ...] = (tuple(range(36, 60)),)
    bs_power_dbm: float = 30.0
    user_power_dbm: float = 20.0
    noise_psd_dbm_per_hz: float = -174.0
    rcs_m2: float = 1.0
    targets: tuple[TargetSpec, ...] = (TargetSpec(),)
    users: tuple[UserSpec, ...] = (UserSpec(),)
    pathloss: str = "free-space"  # or "fixed"
    fixed_gains: tuple[float, float, float] = (1.0, 1.0, 0.5)  # echo, direct, reflected


@dataclass(frozen=True)
class QuantizerBlock:
    bits: tuple[int, ...] = (1, 2, 3, 4)
    margin_db: float = 0.0
    include_ideal: bool = True


@dataclass(frozen=True)
class ExperimentBlock:
    kind: str | None = None  # None: chosen by the CLI verb
    snr_db: tuple[float, ...] | None = None
    trials: int = 1000
    grid_step_deg: float = 0.05
    refine: bool = False
    validation_scenario: bool = True
    theta_deg: float | None = None
    nuisance: str = "known"
    n_points: int = 20
    mu: tuple[float, ...] | None = None
    n_placements: int = 200
    radius_m: float = 200.0


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "results"
    formats: tuple[str, ...] = ("csv",)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioBlock = ScenarioBlock()
    quantizer: QuantizerBlock = QuantizerBlock()
    experiment: ExperimentBlock = ExperimentBlock()
    output: OutputBlock = OutputBlock()
    seed: int = 0

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_kind(self, kind: str) -> "RunConfig":
        return replace(self, experiment=replace(self.experiment, kind=kind))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# loading and validation
# ---------------------------------------------------------------------------

def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _num(path, x, errors, positive=False, nonneg=False):
    if not _is_num(x):
        errors.append(f"{path}: expected a finite number, got {x!r}")
        return None
    if positive and not x > 0:
        errors.append(f"{path}: must be > 0, got {x!r}")
    if nonneg and x < 0:
        errors.append(f"{path}: must be >= 0, got {x!r}")
    return float(x)


def _int(path, x, errors, lo=None):
    if not _is_int(x):
        errors.append(f"{path}: expected an integer, got {x!r}")
        return None
    if lo is not None and x < lo:
        errors.append(f"{path}: must be >= {lo}, got {x!r}")
    return int(x)


def _list(path, x, errors):
    if not isinstance(x, list):
        errors.append(f"{path}: expected a list, got {x!r}")
        return None
    return x


def _check_keys(path, data, cls, errors):
    if not isinstance(data, dict):
        errors.append(f"{path}: expected an object, got {type(data).__name__}")
        return {}
    known = {f.name for f in fields(cls)}
    for k in data:
        if k not in known:
            errors.append(f"{path}.{k}: unknown field")
    return {k: v for k, v in data.items() if k in known}


def _parse_scenario(data, errors) -> ScenarioBlock:
    d = _check_keys("scenario", data, ScenarioBlock, errors)
    out: dict[str, Any] = {}
    for name in ("bs_antennas", "num_symbols"):
        if name in d:
            out[name] = _int(f"scenario.{name}", d[name], errors, lo=1)
    for name in ("element_spacing", "carrier_freq_hz", "subcarrier_spacing_hz", "rcs_m2"):
        if name in d:
            out[name] = _num(f"scenario.{name}", d[name], errors, positive=True)
    for name in ("bs_gain_dbi", "user_gain_dbi", "bs_power_dbm", "user_power_dbm", "noise_psd_dbm_per_hz"):
        if name in d:
            out[name] = _num(f"scenario.{name}", d[name], errors)
    if "user_antennas" in d and _list("scenario.user_antennas", d["user_antennas"], errors) is not None:
        out["user_antennas"] = tuple(
            _int(f"scenario.user_antennas[{i}]", n, errors, lo=1) for i, n in enumerate(d["user_antennas"])
        )
    if "dl_subcarriers" in d and _list("scenario.dl_subcarriers", d["dl_subcarriers"], errors) is not None:
        out["dl_subcarriers"] = tuple(
            _int(f"scenario.dl_subcarriers[{i}]", m, errors, lo=0) for i, m in enumerate(d["dl_subcarriers"])
        )
    if "ul_subcarriers" in d and _list("scenario.ul_subcarriers", d["ul_subcarriers"], errors) is not None:
        ul = []
        for k, s in enumerate(d["ul_subcarriers"]):
            if _list(f"scenario.ul_subcarriers[{k}]", s, errors) is None:
                continue
            ul.append(tuple(_int(f"scenario.ul_subcarriers[{k}][{i}]", m, errors, lo=0) for i, m in enumerate(s)))
        out["ul_subcarriers"] = tuple(ul)
    if "targets" in d and _list("scenario.targets", d["targets"], errors) is not None:
        ts = []
        for i, t in enumerate(d["targets"]):
            tt = _check_keys(f"scenario.targets[{i}]", t, TargetSpec, errors)
            ts.append(TargetSpec(
                distance_m=_num(f"scenario.targets[{i}].distance_m", tt.get("distance_m", 100.0), errors, positive=True),
                angle_deg=_num(f"scenario.targets[{i}].angle_deg", tt.get("angle_deg", 50.0), errors),
                doppler_hz=_num(f"scenario.targets[{i}].doppler_hz", tt.get("doppler_hz", 0.0), errors),
            ))
        out["targets"] = tuple(ts)
    if "users" in d and _list("scenario.users", d["users"], errors) is not None:
        us = []
        for k, u in enumerate(d["users"]):
            uu = _check_keys(f"scenario.users[{k}]", u, UserSpec, errors)
            us.append(UserSpec(
                distance_m=_num(f"scenario.users[{k}].distance_m", uu.get("distance_m", 100.0), errors, positive=True),
                angle_deg=_num(f"scenario.users[{k}].angle_deg", uu.get("angle_deg", 0.0), errors),
            ))
        out["users"] = tuple(us)
    if "pathloss" in d:
        if d["pathloss"] not in ("free-space", "fixed"):
            errors.append(f"scenario.pathloss: must be 'free-space' or 'fixed', got {d['pathloss']!r}")
        out["pathloss"] = d["pathloss"]
    if "fixed_gains" in d:
        g = _list("scenario.fixed_gains", d["fixed_gains"], errors)
        if g is not None:
            if len(g) != 3:
                errors.append("scenario.fixed_gains: expected [echo, direct, reflected]")
            out["fixed_gains"] = tuple(_num(f"scenario.fixed_gains[{i}]", x, errors, nonneg=True) for i, x in enumerate(g))
    blk = ScenarioBlock(**out)

    # cross-field checks
    K = len(blk.users)
    if len(blk.user_antennas) != K:
        errors.append(f"scenario.user_antennas: {len(blk.user_antennas)} entries for {K} users")
    if len(blk.ul_subcarriers) != K:
        errors.append(f"scenario.ul_subcarriers: {len(blk.ul_subcarriers)} sets for {K} users")
    if not blk.targets:
        errors.append("scenario.targets: at least one target is required")
    sets = [blk.dl_subcarriers, *blk.ul_subcarriers]
    if all(m is not None for s in sets for m in s):
        from .scenario import subcarrier_overlap

        overlap = subcarrier_overlap(blk.dl_subcarriers, blk.ul_subcarriers)
        if overlap:
            errors.append(f"scenario: DL/UL subcarrier sets overlap at indices {overlap}")
        for name, s in [("dl_subcarriers", blk.dl_subcarriers)] + [
            (f"ul_subcarriers[{k}]", s) for k, s in enumerate(blk.ul_subcarriers)
        ]:
            if not s:
                errors.append(f"scenario.{name}: empty subcarrier set")
            elif len(set(s)) != len(s):
                errors.append(f"scenario.{name}: repeated subcarrier indices")
    return blk


def _parse_quantizer(data, errors) -> QuantizerBlock:
    d = _check_keys("quantizer", data, QuantizerBlock, errors)
    out: dict[str, Any] = {}
    if "bits" in d:
        b = d["bits"] if isinstance(d["bits"], list) else [d["bits"]]
        out["bits"] = tuple(_int(f"quantizer.bits[{i}]", x, errors, lo=1) for i, x in enumerate(b))
        if any(_is_int(x) and x > 16 for x in b):
            errors.append("quantizer.bits: resolutions above 16 bits are not supported")
    if "margin_db" in d:
        out["margin_db"] = _num("quantizer.margin_db", d["margin_db"], errors, nonneg=True)
    if "include_ideal" in d:
        if not isinstance(d["include_ideal"], bool):
            errors.append("quantizer.include_ideal: expected true or false")
        out["include_ideal"] = d["include_ideal"]
    return QuantizerBlock(**out)


def _parse_experiment(data, errors) -> ExperimentBlock:
    d = _check_keys("experiment", data, ExperimentBlock, errors)
    out: dict[str, Any] = {}
    if "kind" in d:
        if d["kind"] is not None and d["kind"] not in EXPERIMENTS:
            errors.append(f"experiment.kind: must be one of {', '.join(EXPERIMENTS)}, got {d['kind']!r}")
        out["kind"] = d["kind"]
    for name in ("snr_db", "mu"):
        if name in d and d[name] is not None:
            v = _list(f"experiment.{name}", d[name], errors)
            if v is not None:
                if not v:
                    errors.append(f"experiment.{name}: empty list")
                out[name] = tuple(
                    _num(f"experiment.{name}[{i}]", x, errors, nonneg=(name == "mu")) for i, x in enumerate(v)
                )
    for name, lo in (("trials", 1), ("n_points", 2), ("n_placements", 1)):
        if name in d:
            out[name] = _int(f"experiment.{name}", d[name], errors, lo=lo)
    for name in ("grid_step_deg", "radius_m"):
        if name in d:
            out[name] = _num(f"experiment.{name}", d[name], errors, positive=True)
    for name in ("refine", "validation_scenario"):
        if name in d:
            if not isinstance(d[name], bool):
                errors.append(f"experiment.{name}: expected true or false")
            out[name] = d[name]
    if "theta_deg" in d and d["theta_deg"] is not None:
        out["theta_deg"] = _num("experiment.theta_deg", d["theta_deg"], errors)
        if _is_num(d["theta_deg"]) and abs(d["theta_deg"]) >= 90:
            errors.append("experiment.theta_deg: must lie strictly inside (-90, 90)")
    if "nuisance" in d:
        if d["nuisance"] not in ("known", "unknown"):
            errors.append(f"experiment.nuisance: must be 'known' or 'unknown', got {d['nuisance']!r}")
        out["nuisance"] = d["nuisance"]
    return ExperimentBlock(**out)


def _parse_output(data, errors) -> OutputBlock:
    d = _check_keys("output", data, OutputBlock, errors)
    out: dict[str, Any] = {}
    if "directory" in d:
        if not isinstance(d["directory"], str) or not d["directory"]:
            errors.append("output.directory: expected a non-empty string")
        out["directory"] = d["directory"]
    if "formats" in d:
        f = _list("output.formats", d["formats"], errors)
        if f is not None:
            bad = [x for x in f if x != "csv"]
            if bad:
                errors.append(f"output.formats: unsupported formats {bad} (only 'csv')")
            out["formats"] = tuple(f)
    return OutputBlock(**out)


def config_from_dict(data: dict) -> RunConfig:
    """Validate a parsed config document; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError([f"top level: expected an object, got {type(data).__name__}"])
    d = _check_keys("config", data, RunConfig, errors)
    cfg = RunConfig(
        scenario=_parse_scenario(d.get("scenario", {}), errors),
        quantizer=_parse_quantizer(d.get("quantizer", {}), errors),
        experiment=_parse_experiment(d.get("experiment", {}), errors),
        output=_parse_output(d.get("output", {}), errors),
        seed=d.get("seed", 0),
    )
    if not _is_int(cfg.seed) or not 0 <= cfg.seed < 2**64:
        errors.append(f"seed: expected an unsigned 64-bit integer, got {cfg.seed!r}")
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> RunConfig:
    """Read a JSON run config; an empty file gives the default configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"{path}: file does not exist"])
    text = path.read_text()
    if not text.strip():
        return RunConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    return config_from_dict(data)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# scenario construction
# ---------------------------------------------------------------------------

def build_scenario(blk: ScenarioBlock):
    from .scenario import ArrayConfig, FrameConfig, scenario_from_geometry

    K = len(blk.users)
    frame = FrameConfig(
        carrier_freq_hz=blk.carrier_freq_hz,
        subcarrier_spacing_hz=blk.subcarrier_spacing_hz,
        num_symbols=blk.num_symbols,
        dl_subcarriers=blk.dl_subcarriers,
        ul_subcarriers=blk.ul_subcarriers,
        symbol_power=(1.0,) * (K + 1),
    )
    arrays = ArrayConfig(
        bs_antennas=blk.bs_antennas,
        user_antennas=blk.user_antennas,
        element_spacing_wavelengths=blk.element_spacing,
        bs_gain_dbi=blk.bs_gain_dbi,
        user_gain_dbi=blk.user_gain_dbi,
    )
    sc = scenario_from_geometry(
        [(t.distance_m, math.radians(t.angle_deg)) for t in blk.targets],
        [(u.distance_m, math.radians(u.angle_deg)) for u in blk.users],
        frame=frame,
        arrays=arrays,
        noise_psd_dbm_per_hz=blk.noise_psd_dbm_per_hz,
        bs_power_max_dbm=blk.bs_power_dbm,
        user_power_max_dbm=blk.user_power_dbm,
        rcs_m2=blk.rcs_m2,
        doppler_hz=[t.doppler_hz for t in blk.targets],
    )
    if blk.pathloss == "fixed":
        echo, direct, refl = blk.fixed_gains
        sc = replace(
            sc,
            targets=tuple(replace(t, complex_gain=complex(echo)) for t in sc.targets),
            users=tuple(
                replace(
                    u,
                    complex_gain=complex(direct),
                    reflected_paths=tuple(replace(p, complex_gain=complex(refl)) for p in u.reflected_paths),
                )
                for u in sc.users
            ),
        )
    return sc


def _resolutions(cfg: RunConfig) -> list[int | None]:
    out: list[int | None] = [None] if cfg.quantizer.include_ideal else []
    return out + list(cfg.quantizer.bits)


def _bits_label(b) -> str:
    return "ideal" if b is None else str(b)


# ---------------------------------------------------------------------------
# experiments; each worker returns a list of row dicts for one sweep key
# ---------------------------------------------------------------------------

def _crb_rows(cfg: RunConfig, bits) -> list[dict]:
    from .crb import ParameterVector, SingularFimError, crb_from_fim, ideal_fim, quantized_fim
    from .estimator import sigma2_for_snr
    from .quantizer import design_lloyd_max
    from .scenario import build_channels
    from .signal import default_precoders, draw_symbols, synthesize_noiseless

    sc = build_scenario(cfg.scenario)
    pre = default_precoders(sc)
    sy = draw_symbols(sc, np.random.default_rng([cfg.seed, 1]))
    x = synthesize_noiseless(build_channels(sc), pre, sy)
    spec = None if bits is None else design_lloyd_max(bits)
    snrs = cfg.experiment.snr_db or tuple(range(-20, 41, 10))
    params = ParameterVector.from_scenario(sc)
    which = [f"theta_tar[{i}]" for i in range(sc.num_targets)]
    rows = []
    for snr in snrs:
        row = {"bits": _bits_label(bits), "snr_db": snr}
        try:
            s = sc.with_noise_variance(sigma2_for_snr(x, snr))
            row["sigma2"] = s.sigma2
            if spec is None:
                F = ideal_fim(s, pre, sy, params)
            else:
                F = quantized_fim(s, pre, sy, spec, params)
            res = crb_from_fim(F, which, nuisance=cfg.experiment.nuisance)
            for i, name in enumerate(which):
                row[f"crb_theta_{i}"] = res[name]
            row["status"] = "ok"
        except (SingularFimError, np.linalg.LinAlgError, ValueError) as exc:
            row["status"] = f"error: {exc}"
        rows.append(row)
    return rows


def _validation_or_config(cfg: RunConfig, default_theta: float):
    from .estimator import validation_scenario

    e = cfg.experiment
    if e.validation_scenario:
        return validation_scenario(theta_deg=e.theta_deg if e.theta_deg is not None else default_theta)
    return build_scenario(cfg.scenario)


def _mse_rows(cfg: RunConfig, bits) -> list[dict]:
    from .estimator import MlExperiment, mse_vs_crb_sweep
    from .quantizer import design_lloyd_max
    from .signal import default_precoders, draw_symbols

    e = cfg.experiment
    sc = _validation_or_config(cfg, 30.0)
    pre = default_precoders(sc)
    sy = draw_symbols(sc, np.random.default_rng([cfg.seed, 1]))
    spec = None if bits is None else design_lloyd_max(bits)
    snrs = e.snr_db or tuple(range(-20, 41, 10))
    rows = []
    # one sweep per SNR point so a failure only costs that point
    for i, snr in enumerate(snrs):
        row = {"bits": _bits_label(bits), "snr_db": snr}
        try:
            exp = MlExperiment(
                sc, pre, sy, (snr,), spec,
                grid_deg=(-90.0, 90.0, e.grid_step_deg), trials=e.trials,
                seed=int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0]),
                refine=e.refine,
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                r = mse_vs_crb_sweep(exp).rows[0]
            row.update(sigma2=r.sigma2, mse=r.mse, crb=r.crb, bias=r.bias,
                       flat_trials=r.flat_trials, trials=r.trials, status="ok")
        except (ValueError, np.linalg.LinAlgError) as exc:
            row["status"] = f"error: {exc}"
        rows.append(row)
    return rows


def _resonance_rows(cfg: RunConfig, bits) -> list[dict]:
    from .estimator import sigma2_for_snr, theta_crb
    from .quantizer import design_lloyd_max
    from .scenario import build_channels
    from .signal import default_precoders, draw_symbols, synthesize_noiseless

    sc = _validation_or_config(cfg, 0.0)
    pre = default_precoders(sc)
    sy = draw_symbols(sc, np.random.default_rng([cfg.seed, 1]))
    x = synthesize_noiseless(build_channels(sc), pre, sy)
    spec = None if bits is None else design_lloyd_max(bits)
    snrs = cfg.experiment.snr_db or tuple(range(-20, 81, 5))
    rows = []
    for snr in snrs:
        row = {"bits": _bits_label(bits), "snr_db": snr}
        try:
            c = theta_crb(sc.with_noise_variance(sigma2_for_snr(x, snr)), pre, sy, spec)
            row.update(crb_theta=c, status="ok" if math.isfinite(c) else "error: no information")
        except (ValueError, np.linalg.LinAlgError) as exc:
            row["status"] = f"error: {exc}"
        rows.append(row)
    return rows


def _boundary_rows(cfg: RunConfig, bits) -> list[dict]:
    from .boundary import BoundaryError, trace_frontier

    if bits is None:
        return []
    sc = build_scenario(cfg.scenario)
    e = cfg.experiment
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fr = trace_frontier(sc, bits=bits, n_points=e.n_points, mus=e.mu, margin_db=cfg.quantizer.margin_db)
    except BoundaryError as exc:
        return [{"bits": bits, "status": f"error: {exc}"}]
    rows = [
        {
            "bits": bits,
            "mu": p.mu,
            "rate_bits": p.rate_bits,
            "rate_kbps": p.rate_kbps,
            "rate_surrogate": p.rate_surrogate,
            "crb": p.crb_rad2,
            "t_epigraph": p.t_epigraph,
            "rank1_gap": max(p.rank1_gap) if p.rank1_gap else float("nan"),
            "pareto": p.pareto,
            "duality_gap": p.duality_gap,
            "status": p.solver_status,
        }
        for p in fr.points
    ]
    rows += [{"bits": bits, "mu": mu, "status": f"error: {msg}"} for mu, msg in fr.failures]
    rows.sort(key=lambda r: (r.get("mu", math.inf), r.get("rate_surrogate", math.inf)))
    return rows


def _minbits_rows(cfg: RunConfig, _bits) -> list[dict]:
    from .boundary import min_bits_scan

    e = cfg.experiment
    blk = cfg.scenario
    kw = dict(
        bs_power_max_dbm=blk.bs_power_dbm,
        user_power_max_dbm=blk.user_power_dbm,
        noise_psd_dbm_per_hz=blk.noise_psd_dbm_per_hz,
        rcs_m2=blk.rcs_m2,
    )
    from .boundary import random_target_scenarios

    scs = random_target_scenarios(e.n_placements, e.radius_m, cfg.seed, **kw)
    rows = min_bits_scan(scs, margin_db=cfg.quantizer.margin_db)
    return [{"dr_sig_db": r.dr_sig_db, "min_bits": r.min_bits, "status": "ok"} for r in rows]


WORKERS: dict[str, Callable[[RunConfig, Any], list[dict]]] = {
    "crb": _crb_rows,
    "mse": _mse_rows,
    "resonance": _resonance_rows,
    "boundary": _boundary_rows,
    "minbits": _minbits_rows,
}


def _sweep_keys(cfg: RunConfig) -> list:
    kind = cfg.experiment.kind
    if kind == "minbits":
        return [None]
    if kind == "boundary":
        return list(cfg.quantizer.bits)
    return _resolutions(cfg)


def _call(args):
    kind, cfg, key = args
    return WORKERS[kind](cfg, key)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _write_csv(path: Path, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


@dataclass
class RunSummary:
    files: list[str] = field(default_factory=list)
    rows_ok: int = 0
    rows_failed: int = 0
    manifest: dict = field(default_factory=dict)


def tool_version() -> str:
    from . import __version__

    return __version__


def run_experiment(cfg: RunConfig, out_dir=None, threads: int = 1) -> RunSummary:
    """Run the selected study and write its tables plus ``manifest.json``."""
    kind = cfg.experiment.kind
    if kind not in EXPERIMENTS:
        raise ConfigError([f"experiment.kind: no experiment selected (got {kind!r})"])
    out = Path(out_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    keys = _sweep_keys(cfg)
    jobs = [(kind, cfg, k) for k in keys]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_call, jobs))  # map keeps the sweep order
    else:
        results = [_call(j) for j in jobs]

    h = cfg.config_hash()
    summary = RunSummary()
    tables: dict[str, list[dict]] = {}
    for key, rows in zip(keys, results):
        for r in rows:
            r["seed"] = cfg.seed
            r["config_hash"] = h
            if str(r.get("status", "ok")).startswith("error"):
                summary.rows_failed += 1
            else:
                summary.rows_ok += 1
        if kind in ("resonance", "boundary"):
            tables[f"{kind}_b{_bits_label(key)}.csv"] = rows
        else:
            tables.setdefault(f"{kind}.csv", []).extend(rows)
    for name, rows in tables.items():
        _write_csv(out / name, rows)
        summary.files.append(name)

    import cvxpy
    import scipy

    summary.manifest = {
        "experiment": kind,
        "config": cfg.to_dict(),
        "config_hash": h,
        "seed": cfg.seed,
        "tool_version": tool_version(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "cvxpy": cvxpy.__version__,
        },
        "started_at": started.isoformat(),
        "duration_s": time.perf_counter() - t0,
        "rows_ok": summary.rows_ok,
        "rows_failed": summary.rows_failed,
        "files": summary.files,
    }
    (out / "manifest.json").write_text(json.dumps(summary.manifest, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qhrf", description="Quantized hybrid radar fusion studies.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in (*EXPERIMENTS, "validate"):
        s = sub.add_parser(verb, help="check a config" if verb == "validate" else f"run the {verb} study")
        s.add_argument("--config", type=Path, help="JSON run config (default: built-in defaults)")
        s.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="worker processes across the sweep")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError([f"--seed: expected an unsigned 64-bit integer, got {args.seed}"])
            cfg = replace(cfg, seed=args.seed)
        if args.verb != "validate":
            if cfg.experiment.kind not in (None, args.verb):
                raise ConfigError(
                    [f"experiment.kind is {cfg.experiment.kind!r} but the command is {args.verb!r}"]
                )
            cfg = cfg.with_kind(args.verb)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.verb == "validate":
        print(f"config ok (hash {cfg.config_hash()})")
        return 0
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2
    summary = run_experiment(cfg, args.out, args.threads)
    out = args.out or Path(cfg.output.directory)
    print(f"{summary.rows_ok} rows ok, {summary.rows_failed} failed -> {out}")
    return 0 if summary.rows_ok > 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
