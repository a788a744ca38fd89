import json
import os
import subprocess
import sys

import numpy as np
import pytest

from synkd.cli import main
from synkd.syntax_data import parse_bracketed
from synkd.train import read_log


def run(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def last_json(out):
    lines = [l for l in out.strip().splitlines() if l.strip()]
    return json.loads(lines[-1])


# --------------------------------------------------------------- small corpus

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny generated corpus + four trained teachers, shared read-only."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = main(["gen-data", "--seed", "7", "--n", "40", "--n-dev", "10",
               "--n-test", "10", "--max-len", "8", "--grammar-size", "4",
               "--out", str(data)])
    assert rc == 0
    teacher_dirs = []
    for kind in ("tlstm-dep", "gcn-dep", "tlstm-con", "gcn-con"):
        out = root / f"t_{kind}"
        rc = main(["train-teacher", "--kind", kind,
                   "--train", str(data / "train.jsonl"),
                   "--dev", str(data / "dev.jsonl"),
                   "--iters", "20", "--batch", "8", "--teacher-emb", "10",
                   "--teacher-hidden", "8", "--teacher-layers", "1",
                   "--eval-every", "10", "--seed", "3", "--out", str(out)])
        assert rc == 0
        teacher_dirs.append(str(out))
    return {"root": root, "data": data, "teachers": ",".join(teacher_dirs)}


def distill_args(workspace, out, *extra):
    return ["distill", "--train", str(workspace["data"] / "train.jsonl"),
            "--dev", str(workspace["data"] / "dev.jsonl"),
            "--teachers", workspace["teachers"],
            "--iters", "6", "--g1", "4", "--g2", "2", "--batch", "4",
            "--emb-dim", "10", "--hidden", "8", "--layers", "2",
            "--eval-every", "3", "--seed", "5", "--out", str(out), *extra]


# ------------------------------------------------------------------- gen-data

def test_gen_data_byte_identical(tmp_path, capsys):
    args = ["gen-data", "--seed", "7", "--n", "25", "--n-dev", "0",
            "--n-test", "0", "--max-len", "8"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "train.jsonl").read_bytes()
    b = (tmp_path / "b" / "train.jsonl").read_bytes()
    assert a == b
    assert main(["gen-data", "--seed", "8", "--n", "25", "--n-dev", "0",
                 "--n-test", "0", "--max-len", "8",
                 "--out", str(tmp_path / "c")]) == 0
    assert a != (tmp_path / "c" / "train.jsonl").read_bytes()
    capsys.readouterr()


def test_gen_data_resolved_config(tmp_path, capsys):
    rc, out, _ = run(capsys, "gen-data", "--seed", "9", "--n", "5", "--n-dev",
                     "0", "--n-test", "0", "--max-len", "6",
                     "--out", str(tmp_path / "d"))
    assert rc == 0
    resolved = json.loads((tmp_path / "d" / "config.resolved.json").read_text())
    assert resolved["command"] == "gen-data"
    assert resolved["config"]["seed"] == 9
    assert resolved["config"]["n"] == 5
    assert resolved["config"]["max_len"] == 6


# ------------------------------------------------------------------- pipeline

def test_teacher_artifacts(workspace):
    first = workspace["teachers"].split(",")[0]
    for name in ("model.syd1", "codec.json", "log.jsonl", "config.resolved.json"):
        assert os.path.exists(os.path.join(first, name)), name
    meta = json.loads(open(os.path.join(first, "config.resolved.json")).read())
    assert meta["artifacts"]["model_kind"] == "tlstm-dep"


def test_distill_eval_pipeline(workspace, tmp_path, capsys):
    student = tmp_path / "student"
    rc, out, _ = run(capsys, *distill_args(workspace, student))
    assert rc == 0
    assert last_json(out)["iters_run"] == 6
    meta = json.loads((student / "config.resolved.json").read_text())
    assert meta["artifacts"]["model_kind"] == "student"

    rc, out, _ = run(capsys, "eval", "--model", str(student), "--data",
                     str(workspace["data"] / "test.jsonl"),
                     "--out", str(tmp_path / "ev"))
    assert rc == 0
    report = last_json(out)
    assert 0.0 <= report["accuracy"] <= 100.0
    assert json.loads((tmp_path / "ev" / "eval.json").read_text()) == report


def test_resolved_config_reproduces_run(workspace, tmp_path, capsys):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(distill_args(workspace, out1)) == 0
    # replay from the resolved config alone; only the output dir changes
    assert main(["distill", "--config", str(out1 / "config.resolved.json"),
                 "--out", str(out2)]) == 0
    assert (out1 / "model.syd1").read_bytes() == (out2 / "model.syd1").read_bytes()
    capsys.readouterr()


def test_distill_zero_lambdas_zero_components(workspace, tmp_path, capsys):
    out = tmp_path / "zl"
    rc, _, _ = run(capsys, *distill_args(workspace, out, "--lambda1", "0",
                                         "--lambda2", "0"))
    assert rc == 0
    rows = read_log(out / "log.jsonl")
    syn = [r["value"] for r in rows if r["metric"] == "loss_syn"]
    sem = [r["value"] for r in rows if r["metric"] == "loss_sem"]
    outp = [r["value"] for r in rows if r["metric"] == "loss_output"]
    assert syn and sem and outp
    assert all(v == 0.0 for v in syn)
    assert all(v == 0.0 for v in sem)
    assert any(v > 0.0 for v in outp)


def test_distill_without_teachers_is_supervised(workspace, tmp_path, capsys):
    out = tmp_path / "sup"
    rc, _, _ = run(capsys, "distill", "--train",
                   str(workspace["data"] / "train.jsonl"),
                   "--iters", "3", "--batch", "4", "--emb-dim", "8",
                   "--hidden", "6", "--layers", "1", "--seed", "1",
                   "--out", str(out))
    assert rc == 0
    assert (out / "model.syd1").exists()


def test_mode_a_round_trip(workspace, tmp_path, capsys):
    student = tmp_path / "sa"
    rc, _, _ = run(capsys, *distill_args(workspace, student, "--mode", "A"))
    assert rc == 0
    meta = json.loads((student / "config.resolved.json").read_text())
    assert any(k.startswith("f_t/") for k in meta["artifacts"]["projections"])
    rc, out, _ = run(capsys, "eval", "--model", str(student), "--data",
                     str(workspace["data"] / "test.jsonl"),
                     "--out", str(tmp_path / "eva"))
    assert rc == 0


def test_soft_mode_needs_structure_heads(workspace, tmp_path, capsys):
    rc, _, err = run(capsys, *distill_args(workspace, tmp_path / "soft",
                                           "--teacher-mode", "soft"))
    assert rc == 1
    assert "structure head" in json.loads(err.strip().splitlines()[-1])["error"]


def test_probe_command(workspace, tmp_path, capsys):
    student = tmp_path / "sp"
    assert main(distill_args(workspace, student)) == 0
    rc, out, _ = run(capsys, "probe", "--model", str(student),
                     "--train", str(workspace["data"] / "train.jsonl"),
                     "--data", str(workspace["data"] / "test.jsonl"),
                     "--probe-task", "dependency-labeling",
                     "--probe-iters", "40", "--out", str(tmp_path / "pr"))
    assert rc == 0
    report = last_json(out)
    assert report["probe_task"] == "dependency-labeling"
    assert 0.0 <= report["accuracy"] <= 100.0
    assert (tmp_path / "pr" / "probe.json").exists()
    assert (tmp_path / "pr" / "config.resolved.json").exists()


def test_probe_dominance_outputs(workspace, tmp_path, capsys):
    full = tmp_path / "full"
    dep_only = tmp_path / "dep1"
    con_only = tmp_path / "con0"
    assert main(distill_args(workspace, full)) == 0
    assert main(distill_args(workspace, dep_only, "--eta", "1")) == 0
    assert main(distill_args(workspace, con_only, "--eta", "0")) == 0
    rc, out, _ = run(capsys, "probe", "--model", str(full),
                     "--train", str(workspace["data"] / "train.jsonl"),
                     "--data", str(workspace["data"] / "test.jsonl"),
                     "--probe-task", "dependency-labeling",
                     "--probe-iters", "20",
                     "--dep-only", str(dep_only), "--con-only", str(con_only),
                     "--out", str(tmp_path / "dom"))
    assert rc == 0
    summary = last_json(out)["dominance"]
    assert sum(b["count"] for b in summary["bins"]) == summary["n"] == 10
    assert (tmp_path / "dom" / "dominance_hist.csv").exists()
    assert (tmp_path / "dom" / "dominance_summary.json").exists()


# -------------------------------------------------------------------- induce

def test_induce_outputs_and_two_token_bracketing(workspace, tmp_path, capsys):
    student = tmp_path / "si"
    assert main(distill_args(workspace, student)) == 0
    # a two-token sentence admits exactly one binary bracketing
    two = tmp_path / "two.jsonl"
    two.write_text(json.dumps({
        "tokens": ["the", "dog"],
        "dep_heads": [2, 0],
        "dep_labels": ["det", "root"],
        "con_tree": "(NP (Det the) (N dog))",
        "label": 0,
    }) + "\n")
    rc, out, _ = run(capsys, "induce", "--model", str(student), "--data",
                     str(two), "--out", str(tmp_path / "ind"))
    assert rc == 0
    trees = (tmp_path / "ind" / "induced_trees.txt").read_text().strip().splitlines()
    heads = (tmp_path / "ind" / "induced_heads.txt").read_text().strip().splitlines()
    assert len(trees) == 1 and len(heads) == 1
    parsed = parse_bracketed(trees[0])[0]
    positions = {(i, j) for i, j, _ in parsed.spans()}
    assert positions == {(0, 1), (1, 2), (0, 2)}
    head_vals = [int(h) for h in heads[0].split()]
    assert len(head_vals) == 2
    assert all(0 <= h <= 2 for h in head_vals)


def test_induce_rejects_teacher_checkpoint(workspace, tmp_path, capsys):
    first = workspace["teachers"].split(",")[0]
    rc, _, err = run(capsys, "induce", "--model", first, "--data",
                     str(workspace["data"] / "test.jsonl"),
                     "--out", str(tmp_path / "x"))
    assert rc == 1
    assert "student" in json.loads(err.strip().splitlines()[-1])["error"]


# ------------------------------------------------------------------ gradcheck

def test_gradcheck_command(tmp_path, capsys):
    rc, out, _ = run(capsys, "gradcheck", "--cases", "2", "--suites",
                     "reg,syn_combine", "--out", str(tmp_path / "gc"))
    assert rc == 0
    rows = [json.loads(l) for l in out.strip().splitlines()]
    assert [r["name"] for r in rows] == ["reg", "syn_combine"]
    assert all(r["ok"] for r in rows)
    assert (tmp_path / "gc" / "gradcheck.json").exists()


def test_gradcheck_unknown_suite(capsys):
    rc, _, err = run(capsys, "gradcheck", "--cases", "1", "--suites", "nosuch")
    assert rc == 1
    assert "nosuch" in json.loads(err.strip().splitlines()[-1])["error"]


# -------------------------------------------------------------------- errors

def test_unknown_flag_exits_2_with_json(capsys):
    rc, _, err = run(capsys, "distill", "--bogus-flag")
    assert rc == 2
    assert "error" in json.loads(err.strip().splitlines()[-1])


def test_invalid_range_rejected(tmp_path, capsys):
    rc, _, err = run(capsys, "gen-data", "--max-len", "99",
                     "--out", str(tmp_path / "x"))
    assert rc == 1
    assert "max_len" in json.loads(err.strip().splitlines()[-1])["error"]


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"mystery": 3}')
    rc, _, err = run(capsys, "gen-data", "--config", str(cfg),
                     "--out", str(tmp_path / "x"))
    assert rc == 1
    assert "mystery" in json.loads(err.strip().splitlines()[-1])["error"]


def test_missing_files_rejected(tmp_path, capsys):
    rc, _, err = run(capsys, "eval", "--model", str(tmp_path / "nosuch"),
                     "--data", "also-nosuch.jsonl", "--out", str(tmp_path / "x"))
    assert rc == 1
    assert json.loads(err.strip().splitlines()[-1])["error"]
    rc, _, err = run(capsys, "distill", "--train",
                     str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "y"))
    assert rc == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "synkd.cli", "gen-data", "--seed", "1", "--n",
         "4", "--n-dev", "0", "--n-test", "0", "--max-len", "6",
         "--out", str(tmp_path / "m")],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout.strip().splitlines()[-1])["command"] == "gen-data"
