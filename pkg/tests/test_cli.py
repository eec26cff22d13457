import csv
import json
import subprocess
import sys

import pytest

from qhrf.cli import ConfigError, RunConfig, config_from_dict, load_config, main, run_experiment, write_config


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SMALL_SCENARIO = {"bs_antennas": 4, "user_antennas": [4], "num_symbols": 4,
                  "dl_subcarriers": list(range(6)), "ul_subcarriers": [list(range(6, 10))]}


def test_empty_file_gives_defaults(tmp_path):
    assert load_config(_write(tmp_path, "")) == RunConfig()
    assert load_config(_write(tmp_path, "{}")) == RunConfig()


def test_every_error_is_reported():
    bad = {
        "quantizer": {"bits": [0, 2]},
        "scenario": {"dl_subcarriers": [0, 1, 2], "ul_subcarriers": [[2, 3]], "bs_antennas": -1},
        "experiment": {"trials": "many"},
        "colour": "blue",
        "seed": -3,
    }
    with pytest.raises(ConfigError) as ei:
        config_from_dict(bad)
    errs = "\n".join(ei.value.errors)
    assert len(ei.value.errors) >= 6
    for needle in ("bits", "[2]", "bs_antennas", "trials", "colour", "seed"):
        assert needle in errs
    with pytest.raises(ConfigError, match="bits"):
        config_from_dict({"quantizer": {"bits": [17]}})


def test_parse_error_carries_position(tmp_path):
    with pytest.raises(ConfigError, match="line 2"):
        load_config(_write(tmp_path, '{\n  "seed": ,\n}'))
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "missing.json")


def test_round_trip(tmp_path):
    cfg = config_from_dict({"scenario": SMALL_SCENARIO, "quantizer": {"bits": [2, 3]}, "seed": 7,
                            "experiment": {"snr_db": [0, 10], "mu": [0.0, 1.0]}})
    p = tmp_path / "out.json"
    write_config(cfg, p)
    back = load_config(p)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert cfg.config_hash() != RunConfig().config_hash()


def test_minbits_run_writes_table_and_manifest(tmp_path):
    cfg = config_from_dict({"experiment": {"kind": "minbits", "n_placements": 15}, "seed": 4})
    s = run_experiment(cfg, tmp_path)
    rows = _rows(tmp_path / "minbits.csv")
    assert len(rows) == 15 and s.rows_ok == 15 and s.rows_failed == 0
    assert set(rows[0]) >= {"dr_sig_db", "min_bits", "status", "seed", "config_hash"}
    bits = [int(r["min_bits"]) for r in rows]
    assert bits == sorted(bits)
    m = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("config", "config_hash", "seed", "tool_version", "versions", "started_at", "duration_s",
                "rows_ok", "rows_failed", "files"):
        assert key in m
    assert m["config_hash"] == cfg.config_hash() == rows[0]["config_hash"]


def test_crb_run_threads_match_serial(tmp_path):
    cfg = config_from_dict({"scenario": SMALL_SCENARIO, "quantizer": {"bits": [1, 2]},
                            "experiment": {"kind": "crb", "snr_db": [-10, 0, 10]}})
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b", threads=2)
    a, b = _rows(tmp_path / "a" / "crb.csv"), _rows(tmp_path / "b" / "crb.csv")
    assert a == b and len(a) == 9  # ideal + two resolutions, three SNRs each
    assert all(r["status"] == "ok" for r in a)


def test_boundary_run_per_resolution_files(tmp_path):
    cfg = config_from_dict({"scenario": SMALL_SCENARIO | {"bs_power_dbm": 10.0}, "quantizer": {"bits": [1]},
                            "experiment": {"kind": "boundary", "n_points": 3}})
    s = run_experiment(cfg, tmp_path)
    assert s.files == ["boundary_b1.csv"]
    rows = _rows(tmp_path / "boundary_b1.csv")
    assert len(rows) == 3
    assert set(rows[0]) >= {"mu", "rate_kbps", "crb", "t_epigraph", "rank1_gap", "pareto", "status"}


def test_main_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, {"experiment": {"n_placements": 5}})
    assert main(["validate", "--config", str(good)]) == 0
    assert "config ok" in capsys.readouterr().out
    bad = _write(tmp_path, {"quantizer": {"bits": [0]}}, "bad.json")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "bits" in capsys.readouterr().err
    wrong = _write(tmp_path, {"experiment": {"kind": "crb"}}, "wrong.json")
    assert main(["minbits", "--config", str(wrong)]) == 2
    assert main(["minbits", "--config", str(good), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["seed"] == 3
    assert main(["minbits", "--config", str(good), "--seed", "-1"]) == 2


def test_module_entry_point(tmp_path):
    p = _write(tmp_path, "")
    out = subprocess.run([sys.executable, "-m", "qhrf", "validate", "--config", str(p)],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0 and "config ok" in out.stdout
