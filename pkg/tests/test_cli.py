"""Command-line surface: pipeline flow, determinism, error contract."""

import json
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "dismantle"]


def run_cli(*args, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [*CLI, *args], capture_output=True, text=True, env=full_env, timeout=300
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    r = run_cli("gen-demos", "--task", "ram_removal", "--n", "3", "--seed", "5",
                "--out", str(root / "demos"))
    assert r.returncode == 0, r.stderr
    r = run_cli("label", "--in", str(root / "demos"), "--out", str(root / "labeled"))
    assert r.returncode == 0, r.stderr
    r = run_cli("split", "--in", str(root / "labeled"), "--out", str(root / "splits"))
    assert r.returncode == 0, r.stderr
    return root


def test_pipeline_outputs_exist(workspace):
    assert len(list((workspace / "demos").glob("*.jsonl"))) == 3
    for name in ("planner", "corrector", "end_to_end"):
        assert (workspace / "splits" / f"{name}.jsonl").exists()


def test_labeled_episodes_have_spans(workspace):
    first = sorted((workspace / "labeled").glob("*.jsonl"))[0]
    header = json.loads(first.read_text().splitlines()[0])
    assert header["phase_spans"]
    raw = json.loads(sorted((workspace / "demos").glob("*.jsonl"))[0].read_text().splitlines()[0])
    assert raw["phase_spans"] == []


def test_gen_demos_byte_deterministic(workspace, tmp_path):
    r = run_cli("gen-demos", "--task", "ram_removal", "--n", "3", "--seed", "5",
                "--out", str(tmp_path / "again"))
    assert r.returncode == 0
    for p in sorted((workspace / "demos").glob("*.jsonl")):
        q = tmp_path / "again" / p.name
        assert q.read_bytes() == p.read_bytes()


def test_downsample_episode_and_split(workspace, tmp_path):
    split_in = workspace / "splits" / "planner.jsonl"
    out = tmp_path / "planner10.jsonl"
    r = run_cli("downsample", "--in", str(split_in), "--out", str(out), "--factor", "3")
    assert r.returncode == 0
    header = json.loads(out.read_text().splitlines()[0])
    assert header["kind"] == "split"
    ep_in = sorted((workspace / "labeled").glob("*.jsonl"))[0]
    out2 = tmp_path / "ep10.jsonl"
    r = run_cli("downsample", "--in", str(ep_in), "--out", str(out2), "--factor", "3")
    assert r.returncode == 0
    n_in = len(ep_in.read_text().splitlines()) - 1
    n_out = len(out2.read_text().splitlines()) - 1
    assert n_out <= n_in // 3 + 5


def test_run_trials_report_compare(tmp_path):
    matrix = {
        "version": 1,
        "master_seed": 21,
        "trials_per_cell": 2,
        "cells": [{"name": "ram", "task": "ram_removal"}],
    }
    cfg = tmp_path / "matrix.json"
    cfg.write_text(json.dumps(matrix))
    r = run_cli("run-trials", "--config", str(cfg), "--out", str(tmp_path / "out"))
    assert r.returncode == 0, r.stderr
    outcomes = tmp_path / "out" / "outcomes.json"
    assert outcomes.exists()
    r = run_cli("report", "--in", str(outcomes), "--format", "csv")
    assert r.returncode == 0
    assert "ram,ram_removal" in r.stdout
    r = run_cli("compare", str(outcomes), str(outcomes))
    assert r.returncode == 0
    assert "+0.0" in r.stdout


def test_seed_env_override(tmp_path):
    matrix = {"version": 1, "master_seed": 1, "trials_per_cell": 1,
              "cells": [{"name": "ram", "task": "ram_removal"}]}
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps(matrix))
    r = run_cli("run-trials", "--config", str(cfg), "--out", str(tmp_path / "o"),
                env={"SELFVLA_SEED": "777"})
    assert r.returncode == 0
    data = json.loads((tmp_path / "o" / "outcomes.json").read_text())
    assert data["master_seed"] == 777


def test_error_contract(tmp_path):
    r = run_cli("report", "--in", str(tmp_path / "nope.json"))
    assert r.returncode == 1
    err = json.loads(r.stderr.strip().splitlines()[-1])
    assert "error" in err and "message" in err
