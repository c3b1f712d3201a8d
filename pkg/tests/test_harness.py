import csv
import io
import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from mmwpos.harness import cli, config, experiments
from mmwpos.harness.config import ConfigError
from mmwpos.harness.results import SCHEMAS, ResultTable
from mmwpos.inference import ResampleError

TINY_MC = ["--trials", "2", "--particles", "200", "--iterations", "2", "--msg-samples", "50"]


def _default_dict():
    return json.loads(config.default_config_text())


def _write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


# ---- config


def test_default_config_round_trip():
    cfg = config.default_config()
    again = config.loads(config.dumps(cfg))
    assert again == cfg
    assert again.hash() == cfg.hash()
    assert config.dumps(again) == config.dumps(cfg)


def test_overrides_change_hash():
    cfg = config.default_config()
    assert cfg.with_overrides(seeds=[3]).hash() != cfg.hash()
    assert cfg.with_overrides(trials=None) == cfg


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("scenario"),
    lambda d: d.update(kind="nope"),
    lambda d: d.update(trials=0),
    lambda d: d.update(seeds=[]),
    lambda d: d["noise"].update(toa_std=-1),
    lambda d: d.update(extra_field=1),
    lambda d: d["scenario"].update(vas=[[0, 0]]),
])
def test_schema_violations(mutate):
    d = _default_dict()
    mutate(d)
    with pytest.raises(ConfigError):
        config.from_dict(d)


@pytest.mark.parametrize("mutate", [
    lambda d: d["priors"].update(va_stds=[1, 1, 1, 1, 1]),
    lambda d: d["scenario"].update(vas=[[0.0, 0.0, 5.0]]) or d["priors"].update(va_stds=[1.0]),
    lambda d: d["priors"].update(new_va_box=[5, 5, 0, 1]),
    lambda d: d["scenario"].update(los=False, vas=[]) or d["priors"].update(va_stds=[]),
])
def test_semantic_violations(mutate):
    d = _default_dict()
    mutate(d)
    with pytest.raises(ConfigError):
        config.from_dict(d)


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        config.load(bad)


# ---- result tables


def test_result_table_requires_schema_columns():
    with pytest.raises(ValueError):
        ResultTable("bounds", [{"config_id": "x"}])


def test_csv_formatting():
    row = {c: 0 for c in SCHEMAS["bounds"]}
    row.update(config_id="a", peb=float("inf"), identifiable=True, beb=0.1)
    text = ResultTable("bounds", [row]).to_csv()
    header, line = text.strip().split("\n")
    assert header.split(",") == SCHEMAS["bounds"]
    vals = dict(zip(SCHEMAS["bounds"], line.split(",")))
    assert vals["peb"] == "inf" and vals["identifiable"] == "1" and vals["beb"] == "0.1"


# ---- CLI


def test_cli_validate_ok(tmp_path, capsys):
    assert cli.cli_main(["validate"]) == 0
    assert cli.cli_main(["validate", "--config", _write(tmp_path, _default_dict())]) == 0


def test_cli_unknown_flag():
    assert cli.cli_main(["bounds", "--bogus"]) == 2
    assert cli.cli_main(["frobnicate"]) == 2
    assert cli.cli_main([]) == 2


def test_cli_bad_configs(tmp_path):
    assert cli.cli_main(["bounds", "--config", str(tmp_path / "nope.json")]) == 2
    d = _default_dict()
    d["trials"] = -1
    assert cli.cli_main(["validate", "--config", _write(tmp_path, d)]) == 2
    assert cli.cli_main(["mc", "--trials", "0"]) == 2
    assert cli.cli_main(["assoc-sweep", "--masks", "nonsense"]) == 2


def test_cli_runtime_failure(monkeypatch):
    def boom(cfg):
        raise ResampleError("message from toa1 to bias has no mass", culprit="toa1")

    monkeypatch.setitem(experiments.DRIVERS, "localize", boom)
    monkeypatch.setitem(cli.DRIVERS, "localize", boom)
    assert cli.cli_main(["localize"]) == 3


def test_mc_aborts_on_failures(monkeypatch):
    def fail(cfg, seed, run=0):
        raise ResampleError("no mass", culprit="doa2")

    monkeypatch.setattr(experiments, "localize_once", fail)
    cfg = config.default_config("mc").with_overrides(trials=3)
    with pytest.raises(experiments.HarnessError, match="3/3"):
        experiments.run_localization_mc(cfg)


def test_bounds_csv_schema(tmp_path):
    out = tmp_path / "b.csv"
    assert cli.cli_main(["bounds", "--max-nlos", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert list(rows[0]) == SCHEMAS["bounds"]
    assert len(rows) == 8 * 4
    side = json.loads((tmp_path / "b.csv.json").read_text())
    assert side["kind"] == "bounds" and side["metadata"]["config_hash"]
    los0 = [r for r in rows if r["config_id"] == "los1_map0_bias0" and r["L_nlos"] == "0"][0]
    assert los0["identifiable"] == "0" and los0["peb"] == "inf"


def test_mc_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.cli_main(["mc", "--seed", "7", *TINY_MC, "--out", str(a)]) == 0
    assert cli.cli_main(["mc", "--seed", "7", *TINY_MC, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.read_text())))
    assert list(rows[0]) == SCHEMAS["mc"] and [r["iteration"] for r in rows] == ["1", "2"]


def test_mc_workers_match_serial():
    cfg = config.default_config("mc").with_overrides(
        seeds=[1], trials=2, particles=200, iterations=2, msg_samples=50)
    assert (experiments.run_localization_mc(cfg, workers=2).to_csv()
            == experiments.run_localization_mc(cfg, workers=1).to_csv())


def test_assoc_sweep_output(capsys):
    code = cli.cli_main(["assoc-sweep", "--seed", "1", "--trials", "2", "--samples", "50",
                         "--bias-stds", "0.1,100", "--masks", "full,no_toa_doa_az"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert list(rows[0]) == SCHEMAS["assoc-sweep"] and len(rows) == 2 * 2 * 2
    assert all(0.0 <= float(r["p_error"]) <= 1.0 for r in rows)


def test_assoc_sweep_reproducible():
    cfg = config.default_config("assoc-sweep").with_overrides(
        seeds=[2], trials=2, assoc_samples=50,
        assoc=config.AssocConfig([1.0], ["full"], ["unknown"]))
    assert experiments.run_assoc_sweep(cfg).to_csv() == experiments.run_assoc_sweep(cfg).to_csv()


def test_localize_output(capsys):
    assert cli.cli_main(["localize", "--seed", "2", "--particles", "300", "--iterations", "2",
                         "--msg-samples", "60"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert list(rows[0]) == SCHEMAS["localize"]
    assert {r["variable"] for r in rows} == {"alpha", "bias", "ue", "va1", "va2", "va3", "va4"}


def test_localize_with_association_runs(capsys):
    assert cli.cli_main(["localize", "--associate", "--seed", "4", "--particles", "300",
                         "--iterations", "2", "--msg-samples", "60"]) == 0


def test_hybrid_reference_values():
    ref = experiments.hybrid_reference(config.default_config("mc"))
    assert 0 < ref["peb"] < 1 and 0 < ref["beb"] < 1
    assert ref["vaeb_new"] > ref["vaeb_prior"] > 0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mmwpos", "validate"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("ok:")
    r = subprocess.run([sys.executable, "-m", "mmwpos", "bounds", "--nope"], capture_output=True, text=True)
    assert r.returncode == 2
