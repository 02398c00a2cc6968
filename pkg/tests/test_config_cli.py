import csv
import json
import re
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from lcn import config as cfgmod
from lcn.cli import main

ROOT = Path(__file__).resolve().parents[1]

TINY = {
    "data": {"n_users": 40, "n_items": 60, "n_clusters": 4, "lifelong_len": 30, "lifelong_min": 8,
             "samples_per_user": 4, "short_len": 8, "short_events": 4},
    "model": {"emb_dim": 4, "hidden": [8, 4]},
    "train": {"epochs": 2, "batch_size": 32, "lr": 0.01},
    "lap": {"k1": 12, "k2": 4, "heads": 2, "inner_dim": 4, "ffn_hidden": 6, "ffn_out": 4},
    "crp": {"n_negatives": 4},
    "analyze": {"k1_grid": [4, 8, 16, 30], "top": 3},
}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "tiny.yaml"
    conf.write_text(yaml.safe_dump(TINY))
    assert main(["gen-data", "--config", str(conf), "--seed", "3", "--out", str(root / "data")]) == 0
    return root, conf


# ---------------------------------------------------------------- config parsing

def test_unknown_key_is_error():
    with pytest.raises(cfgmod.ConfigError, match="k3"):
        cfgmod.build({"lap": {"k3": 1}})
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.build({"nonsense": {}})
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.build(overrides=["lap.nope=1"])


def test_type_mismatch_is_error():
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.build(overrides=["lap.k1=many"])


def test_override_and_seed_precedence():
    cfg = cfgmod.build({"seed": 1, "lap": {"k1": 10}}, overrides=["lap.k1=80", "crp.temperature=0.5"], seed=9)
    assert cfg.lap.k1 == 80 and cfg.crp.temperature == 0.5 and cfg.seed == 9
    assert cfg.model_config().seed == 9 and cfg.crp_config().seed == 9


def test_bad_override_syntax():
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse_override("lap.k1")


def test_dump_round_trip(tmp_path):
    cfg = cfgmod.build(overrides=["train.lr=0.05", "ablate.grid=[[10,2],[20,4]]"], seed=4)
    back = cfgmod.load(cfg.dump(tmp_path / "c.yaml"))
    assert back.to_dict() == cfg.to_dict()


def test_every_config_key_documented():
    readme = (ROOT / "README.md").read_text()
    missing = [k for k in cfgmod.all_keys() if f"`{k}`" not in readme]
    assert not missing, missing


# ---------------------------------------------------------------- exit codes

def test_unknown_command_exits_1(capsys):
    assert main(["frobnicate"]) == 1


def test_missing_required_flag_exits_1(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == 1


def test_unknown_config_key_exits_1(tmp_path):
    assert main(["gen-data", "--set", "data.wrong=1", "--out", str(tmp_path)]) == 1


def test_missing_config_file_exits_1(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 1


def test_missing_dataset_exits_2(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2


def test_help_lists_all_commands():
    out = subprocess.run([sys.executable, "-m", "lcn", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("gen-data", "ingest", "train", "eval", "ablate", "analyze"):
        assert name in out.stdout


@pytest.mark.parametrize("cmd", ["gen-data", "ingest", "train", "eval", "ablate", "analyze"])
def test_subcommand_help(cmd):
    out = subprocess.run([sys.executable, "-m", "lcn", cmd, "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for flag in ("--config", "--set", "--seed", "--out"):
        assert flag in out.stdout


# ---------------------------------------------------------------- end to end

def _train(root, conf, name, seed=5, extra=()):
    out = root / name
    rc = main(["train", "--config", str(conf), "--data", str(root / "data"), "--seed", str(seed),
               "--out", str(out), *extra])
    assert rc == 0
    return out


def test_effective_config_written(tiny):
    root, conf = tiny
    out = _train(root, conf, "cfgrun", extra=["--set", "train.epochs=1"])
    eff = yaml.safe_load((out / "config.yaml").read_text())
    assert eff["seed"] == 5 and eff["train"]["epochs"] == 1 and eff["lap"]["k1"] == 12
    assert cfgmod.load(out / "config.yaml").to_dict() == eff


def test_train_then_eval_on_train_split_matches(tiny):
    root, conf = tiny
    out = _train(root, conf, "run")
    final = json.loads((out / "final.json").read_text())
    rc = main(["eval", "--checkpoint", str(out), "--data", str(root / "data"), "--split", "train",
               "--out", str(root / "ev")])
    assert rc == 0
    report = json.loads((root / "ev" / "report.json").read_text())
    assert abs(report["logloss"] - final["train_logloss"]) <= 1e-6


def test_metric_logs_bit_identical(tiny):
    root, conf = tiny
    a, b = _train(root, conf, "d1", seed=11), _train(root, conf, "d2", seed=11)
    for name in ("metrics.jsonl", "steps.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_analyze_outputs(tiny):
    root, conf = tiny
    out = _train(root, conf, "an_src")
    rc = main(["analyze", "--config", str(conf), "--checkpoint", str(out), "--data", str(root / "data"),
               "--out", str(root / "an")])
    assert rc == 0
    with open(root / "an" / "consistency.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["K1"]) for r in rows] == [4, 8, 16, 30]
    assert all(0.0 <= float(r["overlap_mean"]) <= 1.0 for r in rows)
    info = json.loads((root / "an" / "analysis.json").read_text())
    assert {"target", "source", "all"} == set(info["separation"])
    assert "gap" in info["separation"]["source"]
    assert (root / "an" / "projection.csv").exists() and (root / "an" / "embeddings.tsv").exists()


def test_ablate_grid_rows(tmp_path):
    conf = tmp_path / "abl.yaml"
    data = dict(TINY["data"], n_users=20, lifelong_len=500, lifelong_min=20, samples_per_user=3)
    conf.write_text(yaml.safe_dump({**TINY, "data": data, "train": {"epochs": 1, "batch_size": 64},
                                    "ablate": {"grid": [[100, 30], [200, 50], [500, 100]]}}))
    assert main(["gen-data", "--config", str(conf), "--out", str(tmp_path / "d")]) == 0
    assert main(["ablate", "--config", str(conf), "--data", str(tmp_path / "d"), "--out", str(tmp_path / "a")]) == 0
    with open(tmp_path / "a" / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(int(r["k1"]), int(r["k2"])) for r in rows] == [(100, 30), (200, 50), (500, 100)]
    for r in rows:
        assert all(r[c] != "" for c in ("auc", "gauc", "logloss"))
        assert 0.0 <= float(r["auc"]) <= 1.0


def test_ingest_command(tmp_path):
    from lcn.data import write_logs
    from test_data import _fixture
    write_logs(_fixture(), tmp_path / "log.csv")
    assert main(["ingest", str(tmp_path / "log.csv"), "--out", str(tmp_path / "d")]) == 0
    assert main(["ingest", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "e")]) == 2


def test_scripts_are_importable():
    for p in sorted((ROOT / "scripts").glob("[!_]*.py")):
        src = p.read_text()
        assert re.search(r'if __name__ == "__main__":', src), p.name
        compile(src, str(p), "exec")
