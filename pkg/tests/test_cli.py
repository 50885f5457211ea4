"""End-to-end command-line tests on a miniature dataset.

One session-scoped workspace runs synth -> train -> eval once; the
individual tests assert on the produced artifacts so the slow steps are
not repeated.
"""

import hashlib
import json
import os
import shutil

import pytest

from mmdefect.cli import main

TINY = [
    "--set", "data.canvas=32", "--set", "data.dots_per_image=60",
    "--set", "data.dot_jitter=10",
    "--set", "model.d=16", "--set", "model.heads=2", "--set", "model.hidden=16",
    "--set", "schedule.warmup_epochs=2", "--set", "schedule.stage_fractions=0.5,1.0",
    "--set", "schedule.epochs_per_stage=2", "--set", "schedule.fusion_epochs=2",
]


def tree_digest(root: str) -> dict:
    out = {}
    for base, _, names in os.walk(root):
        for name in names:
            path = os.path.join(base, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data")
    run = str(root / "run")
    ev = str(root / "eval")
    assert main(["synth", "--out", data, "--seed", "1"] + TINY) == 0
    assert main(["train", "--data", data, "--out", run, "--seed", "1"] + TINY) == 0
    assert main(["eval", "--data", data, "--ckpt", os.path.join(run, "model.ckpt"),
                 "--out", ev, "--seed", "1"] + TINY) == 0
    return {"data": data, "run": run, "eval": ev}


def test_synth_artifacts(workspace):
    data = workspace["data"]
    assert os.path.exists(os.path.join(data, "manifest.jsonl"))
    with open(os.path.join(data, "catalog.json")) as fh:
        catalog = json.load(fh)
    assert catalog["seed"] == 1
    assert len(catalog["config_hash"]) == 12
    assert len(catalog["classes"]) == 5
    with open(os.path.join(data, "manifest.jsonl")) as fh:
        rows = [json.loads(line) for line in fh]
    assert all(os.path.exists(os.path.join(data, r["image"])) for r in rows[:5])
    assert {r["split"] for r in rows} == {"train", "test"}
    # augmented data only ever lands in train
    assert all(r["provenance"] == "original" for r in rows if r["split"] == "test")
    with open(os.path.join(data, rows[0]["image"]), "rb") as fh:
        assert fh.read(2) == b"P5"


def test_synth_deterministic(workspace, tmp_path):
    repeat = str(tmp_path / "again")
    assert main(["synth", "--out", repeat, "--seed", "1"] + TINY) == 0
    assert tree_digest(repeat) == tree_digest(workspace["data"])


def test_synth_seed_changes_output(workspace, tmp_path):
    other = str(tmp_path / "other")
    assert main(["synth", "--out", other, "--seed", "2"] + TINY) == 0
    assert tree_digest(other) != tree_digest(workspace["data"])


def test_train_artifacts(workspace):
    run = workspace["run"]
    assert os.path.exists(os.path.join(run, "model.ckpt"))
    with open(os.path.join(run, "model.ckpt"), "rb") as fh:
        assert fh.read(5) == b"ASEMM"
    with open(os.path.join(run, "stages.csv")) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# seed=1 config=")
    assert lines[1].startswith("# adamw betas=")
    assert lines[2] == "stage,epoch,phase,active_size,train_loss,pend_loss,tau,lr"
    phases = {line.split(",")[2] for line in lines[3:]}
    assert phases == {"probe", "llm", "llm+vlm", "ce"}


def test_train_deterministic(workspace, tmp_path):
    repeat = str(tmp_path / "run2")
    assert main(["train", "--data", workspace["data"], "--out", repeat,
                 "--seed", "1"] + TINY) == 0
    for name in ("model.ckpt", "stages.csv"):
        with open(os.path.join(repeat, name), "rb") as a, \
             open(os.path.join(workspace["run"], name), "rb") as b:
            assert a.read() == b.read(), name


def test_resume_matches_uninterrupted(workspace, tmp_path):
    resumed = str(tmp_path / "resume")
    shutil.copytree(workspace["run"], resumed)
    os.remove(os.path.join(resumed, "model.ckpt"))
    assert main(["train", "--data", workspace["data"], "--out", resumed,
                 "--seed", "1", "--resume"] + TINY) == 0
    with open(os.path.join(resumed, "model.ckpt"), "rb") as a, \
         open(os.path.join(workspace["run"], "model.ckpt"), "rb") as b:
        assert a.read() == b.read()


def test_resume_completed_is_noop(workspace, capsys):
    assert main(["train", "--data", workspace["data"], "--out", workspace["run"],
                 "--seed", "1", "--resume"] + TINY) == 0
    assert "already complete" in capsys.readouterr().out


def test_eval_artifacts(workspace):
    ev = workspace["eval"]
    with open(os.path.join(ev, "metrics.csv")) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# seed=1 config=")
    assert lines[1] == "task,class,precision,recall,f1"
    assert len(lines) == 2 + 5  # one row per class
    with open(os.path.join(ev, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["seed"] == 1
    assert summary["task"] == "multi"
    assert 0.0 <= summary["macro_f1"] <= 1.0


def test_eval_binary_task(workspace, tmp_path):
    out = str(tmp_path / "bin")
    assert main(["eval", "--data", workspace["data"],
                 "--ckpt", os.path.join(workspace["run"], "model.ckpt"),
                 "--out", out, "--seed", "1", "--task", "binary"] + TINY) == 0
    with open(os.path.join(out, "metrics.csv")) as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 2 + 2  # defect-free vs defective
    assert all(line.startswith("binary,") for line in lines[2:])


def test_embed_csv(workspace, tmp_path):
    out = str(tmp_path / "z.csv")
    assert main(["embed", "--data", workspace["data"],
                 "--ckpt", os.path.join(workspace["run"], "model.ckpt"),
                 "--out", out, "--seed", "1"] + TINY) == 0
    with open(out) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# seed=1 config=")
    assert lines[1].split(",") == ["id", "label"] + [f"z{i}" for i in range(16)]
    with open(os.path.join(workspace["data"], "manifest.jsonl")) as fh:
        rows = sum(1 for _ in fh)
    assert len(lines) == 2 + rows


def test_extract_stats(workspace, capsys):
    with open(os.path.join(workspace["data"], "manifest.jsonl")) as fh:
        row = json.loads(fh.readline())
    image = os.path.join(workspace["data"], row["image"])
    assert main(["extract-stats", "--image", image]) == 0
    record = json.loads(capsys.readouterr().out)
    assert set(record) == {"mean", "std", "ring_counts", "lit_pixels", "total_dots"}
    assert len(record["ring_counts"]) == 16


def test_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert main(["synth"]) == 1                               # missing --out
    assert main(["synth", "--out", str(tmp_path / "x"), "--set", "data.canvas=7"]) == 1
    assert main(["train", "--data", str(tmp_path / "absent"),
                 "--out", str(tmp_path / "r")]) == 1
    assert main(["ablate", "--out", str(tmp_path / "a"), "--variants", "nope"]) == 1
    assert main(["extract-stats", "--image", str(tmp_path / "missing.pgm")]) == 1
    capsys.readouterr()
