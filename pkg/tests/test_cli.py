"""Command surface: exit codes, JSON outputs, reproducibility."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

BASE_CONFIG = {
    "corpus": {"count": 12, "seed": 5, "T": 6, "grid_rows": 3, "grid_cols": 3,
               "second_agent_prob": 0.3},
    "bank": {"distractor_ratio": 1.0},
    "model": {"encoder": {"d_model": 16, "heads": 2, "temporal_layers": 1,
                          "spatial_layers": 1, "mlp_hidden": 8}},
    "train": {"epochs": 2, "batch_size": 4, "seed": 3},
}


def run_cli(*argv, check=True):
    proc = subprocess.run([sys.executable, "-m", "motionground.cli", *argv],
                          capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"cli failed ({proc.returncode}):\n{proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(BASE_CONFIG))
    corpus = root / "corpus.jsonl"
    bank = root / "bank"
    run_cli("gen", "--config", str(cfg_path), "--corpus", str(corpus))
    run_cli("bank", "--config", str(cfg_path), "--corpus", str(corpus),
            "--bank", str(bank))
    run_dir = root / "run"
    out = run_cli("train", "--config", str(cfg_path), "--corpus", str(corpus),
                  "--bank", str(bank), "--out-dir", str(run_dir), "--quiet",
                  "--deterministic")
    payload = json.loads(out.stdout)
    return {
        "root": root, "config": cfg_path, "corpus": corpus, "bank": bank,
        "run_dir": run_dir, "train_payload": payload,
        "checkpoint": payload["best_checkpoint"],
    }


def test_gen_emits_summary_and_files(workdir):
    out = run_cli("gen", "--config", str(workdir["config"]),
                  "--corpus", str(workdir["root"] / "again.jsonl"))
    payload = json.loads(out.stdout)
    assert payload["scenes"] == 12
    assert payload["separability"] >= 0.8
    assert payload["config"]["corpus"]["count"] == 12
    assert os.path.exists(workdir["root"] / "again.jsonl.manifest.json")


def test_gen_is_reproducible(workdir):
    a = workdir["root"] / "r1.jsonl"
    b = workdir["root"] / "r2.jsonl"
    run_cli("gen", "--config", str(workdir["config"]), "--corpus", str(a))
    run_cli("gen", "--config", str(workdir["config"]), "--corpus", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_train_outputs(workdir):
    payload = workdir["train_payload"]
    run_dir = workdir["run_dir"]
    assert os.path.exists(payload["best_checkpoint"] + ".f32")
    assert os.path.exists(run_dir / "training_log.csv")
    manifest = json.loads((run_dir / "run_manifest.json").read_text())
    assert "corpus_hash" in manifest and "config" in manifest
    assert payload["steps"] > 0


def test_eval_reports_metrics(workdir):
    out = run_cli("eval", "--config", str(workdir["config"]),
                  "--checkpoint", workdir["checkpoint"],
                  "--corpus", str(workdir["corpus"]), "--bank", str(workdir["bank"]),
                  "--split", "test")
    payload = json.loads(out.stdout)
    m = payload["metrics"]
    assert 0.0 <= m["v2t"]["r1"] <= 1.0
    assert 0.0 <= m["grounding"]["mean_j"] <= 1.0
    assert m["discovery"]["avg_expressions"] >= 0.0


def test_discover_and_ground(workdir):
    out = run_cli("discover", "--config", str(workdir["config"]),
                  "--checkpoint", workdir["checkpoint"],
                  "--corpus", str(workdir["corpus"]), "--bank", str(workdir["bank"]),
                  "--scene", "0", "--top-k", "2")
    payload = json.loads(out.stdout)
    assert len(payload["entries"]) == 2
    assert len(payload["grounding"]) == 2
    assert all("scores" in rec for rec in payload["grounding"])

    expr = payload["ground_truth"][0]
    prefix = str(workdir["root"] / "rel")
    out = run_cli("ground", "--config", str(workdir["config"]),
                  "--checkpoint", workdir["checkpoint"],
                  "--corpus", str(workdir["corpus"]), "--bank", str(workdir["bank"]),
                  "--scene", "0", "--expression", expr, "--csv-prefix", prefix)
    rec = json.loads(out.stdout)
    assert len(rec["scores"]) == 9
    assert os.path.exists(prefix + ".scores.csv")
    assert os.path.exists(prefix + ".heads.csv")


def test_outputs_do_not_mutate_inputs(workdir):
    before = workdir["corpus"].read_bytes()
    run_cli("eval", "--config", str(workdir["config"]),
            "--checkpoint", workdir["checkpoint"],
            "--corpus", str(workdir["corpus"]), "--bank", str(workdir["bank"]))
    assert workdir["corpus"].read_bytes() == before


def test_config_error_exits_1(workdir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"corpus": {"count": 5, "bogus_key": 1}}))
    proc = run_cli("gen", "--config", str(bad), "--corpus", str(tmp_path / "x.jsonl"),
                   check=False)
    assert proc.returncode == 1
    assert "bogus_key" in proc.stderr


def test_missing_data_exits_2(workdir, tmp_path):
    proc = run_cli("bank", "--corpus", str(tmp_path / "missing.jsonl"),
                   "--bank", str(tmp_path / "b"), check=False)
    assert proc.returncode == 2


def test_hash_mismatch_exits_2(workdir):
    other_corpus = workdir["root"] / "other.jsonl"
    cfg = dict(BASE_CONFIG)
    cfg["corpus"] = dict(cfg["corpus"], seed=99)
    other_cfg = workdir["root"] / "other.json"
    other_cfg.write_text(json.dumps(cfg))
    run_cli("gen", "--config", str(other_cfg), "--corpus", str(other_corpus))
    proc = run_cli("eval", "--config", str(workdir["config"]),
                   "--checkpoint", workdir["checkpoint"],
                   "--corpus", str(other_corpus), "--bank", str(workdir["bank"]),
                   check=False)
    assert proc.returncode == 2
    assert "hash" in proc.stderr


def test_unknown_scene_exits_2(workdir):
    proc = run_cli("discover", "--config", str(workdir["config"]),
                   "--checkpoint", workdir["checkpoint"],
                   "--corpus", str(workdir["corpus"]), "--bank", str(workdir["bank"]),
                   "--scene", "999", check=False)
    assert proc.returncode == 2


def test_deterministic_training_is_byte_identical(workdir):
    dirs = []
    for tag in ("d1", "d2"):
        run_dir = workdir["root"] / tag
        run_cli("train", "--config", str(workdir["config"]),
                "--corpus", str(workdir["corpus"]), "--bank", str(workdir["bank"]),
                "--out-dir", str(run_dir), "--quiet", "--deterministic", "--threads", "1")
        dirs.append(run_dir)
    a, b = dirs
    assert (a / "training_log.csv").read_bytes() == (b / "training_log.csv").read_bytes()
    assert (a / "final.f32").read_bytes() == (b / "final.f32").read_bytes()
    assert (a / "final.manifest.json").read_bytes() == (b / "final.manifest.json").read_bytes()


def test_out_flag_writes_json_file(workdir):
    out_path = workdir["root"] / "summary.json"
    run_cli("gen", "--config", str(workdir["config"]),
            "--corpus", str(workdir["root"] / "o.jsonl"), "--out", str(out_path))
    payload = json.loads(out_path.read_text())
    assert payload["command"] == "gen"
