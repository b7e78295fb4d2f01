import csv
import io
import json
import subprocess
import sys

import pytest

from calm import training
from calm.cli import cost_table, main

FAST_CFG = {"lr": 2e-4, "head_lr": 2e-3, "micro_batch": 16, "grad_accum": 1, "epochs": 2, "balance": False,
            "d_model": 32, "n_layers": 1, "n_heads": 2, "d_ff": 32}


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "additive", "--n-docs", "200", "--seed", "1", "--out", str(root / "data")]) == 0
    (root / "cfg.json").write_text(json.dumps(FAST_CFG))
    return root


def _train_args(root, out, variant="calm", extra=()):
    d = root / "data"
    return ["train", "--variant", variant, "--config", str(root / "cfg.json"), "--train", str(d / "train.jsonl"),
            "--val", str(d / "validation.jsonl"), "--test", str(d / "test.jsonl"), "--schema",
            str(d / "schema.txt"), "--out", str(out), *extra]


@pytest.fixture(scope="module")
def calm_run(fixture_dir):
    out = fixture_dir / "calm"
    assert main(_train_args(fixture_dir, out)) == 0
    return out


def test_train_writes_run_directory(calm_run):
    for name in ("manifest.json", "config.json", "checkpoint.npz", "vocab.tsv", "history.json", "metrics.json"):
        assert (calm_run / name).exists(), name
    manifest = json.loads((calm_run / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["variant"] == "calm"
    assert len(manifest["inputs"]["train"]["sha256"]) == 64
    metrics = json.loads((calm_run / "metrics.json").read_text())
    assert {"auc_pr", "f1", "auc_roc"} <= set(metrics)


def test_rerun_gives_identical_metrics(fixture_dir, calm_run):
    out = fixture_dir / "calm_again"
    assert main(_train_args(fixture_dir, out)) == 0
    assert (out / "metrics.json").read_bytes() == (calm_run / "metrics.json").read_bytes()
    assert (out / "checkpoint.npz").read_bytes() == (calm_run / "checkpoint.npz").read_bytes()


def test_usage_errors_exit_one(fixture_dir, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(_train_args(fixture_dir, fixture_dir / "x", variant="gam"))
    assert exc.value.code == 1
    assert main(_train_args(fixture_dir, fixture_dir / "y", variant="distill")) == 1
    assert "usage" in capsys.readouterr().err


def test_data_error_exits_two(fixture_dir, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{broken\n")
    args = _train_args(fixture_dir, tmp_path / "run")
    args[args.index("--train") + 1] = str(bad)
    assert main(args) == 2


def test_numerical_failure_exits_three(fixture_dir, tmp_path, monkeypatch):
    monkeypatch.setattr(training, "batch_loss", lambda model, mb, cfg, teacher=None:
                        model.batch_logits(mb)[:, 0] * float("inf"))
    assert main(_train_args(fixture_dir, tmp_path / "run")) == 3


def test_eval_reports_three_metrics(fixture_dir, calm_run, capsys):
    out = fixture_dir / "eval"
    assert main(["eval", "--checkpoint", str(calm_run / "checkpoint.npz"), "--corpus",
                 str(fixture_dir / "data" / "test.jsonl"), "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert {"auc_pr", "f1", "auc_roc"} <= set(report)
    assert json.loads((out / "metrics.json").read_text()) == report
    rows = list(csv.DictReader(open(out / "breakdown.csv")))
    assert rows[0].keys() == {"doc_id", "component_name", "logit_class0", "logit_class1", "risk_score"}


def test_explain_influence_has_m_rows(fixture_dir, calm_run):
    out = fixture_dir / "explain"
    ck, corpus = str(calm_run / "checkpoint.npz"), str(fixture_dir / "data" / "test.jsonl")
    assert main(["explain", "--checkpoint", ck, "--corpus", corpus, "--what", "influence", "--out", str(out)]) == 0
    assert len(list(csv.DictReader(open(out / "influence.csv")))) == 6
    assert (out / "influence.svg").exists()
    assert main(["explain", "--checkpoint", ck, "--corpus", corpus, "--what", "curve:f3", "--format", "csv",
                 "--out", str(out)]) == 0
    assert main(["explain", "--checkpoint", ck, "--corpus", corpus, "--what", "patient:nobody",
                 "--out", str(out)]) == 2
    assert main(["explain", "--checkpoint", ck, "--corpus", corpus, "--what", "everything",
                 "--out", str(out)]) == 1


def test_distill_alpha_zero_matches_calm(fixture_dir, calm_run):
    teacher = fixture_dir / "teacher"
    assert main(_train_args(fixture_dir, teacher, variant="baseline")) == 0
    d = fixture_dir / "data"
    out = fixture_dir / "distill0"
    assert main(["distill", "--teacher", str(teacher / "checkpoint.npz"), "--alpha", "0", "--config",
                 str(fixture_dir / "cfg.json"), "--train", str(d / "train.jsonl"), "--val",
                 str(d / "validation.jsonl"), "--test", str(d / "test.jsonl"), "--schema", str(d / "schema.txt"),
                 "--out", str(out)]) == 0
    assert (out / "teacher_cache.csv").exists()
    assert (out / "metrics.json").read_bytes() == (calm_run / "metrics.json").read_bytes()
    h1 = json.loads((out / "history.json").read_text())
    h0 = json.loads((calm_run / "history.json").read_text())
    assert h1["train_loss"] == h0["train_loss"]


def test_cost_rows(tmp_path, capsys):
    lengths = tmp_path / "lengths.txt"
    lengths.write_text("3,4\n5 5 5\n")
    assert main(["cost", "--lengths", str(lengths), "--delimiter", "comma"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    first = rows[0]
    assert (first["independent"], first["padded"], first["packed_dense"]) == ("25", "32", "49")
    assert first["textpair_total"] == "74"
    assert rows[1]["padded"] == rows[1]["independent"]
    assert all(r["packed_blocksparse"] == r["independent"] for r in rows)
    assert rows[-1]["doc_id"] == "__total__"
    assert main(["cost"]) == 1


def test_cost_on_corpus(fixture_dir, capsys):
    assert main(["cost", "--corpus", str(fixture_dir / "data" / "test.jsonl")]) == 0
    table = cost_table([("a", [4, 4, 4])])
    assert table[0][4:8] == [48, 48, 144, 48]


def test_module_entry_point_reports_version():
    out = subprocess.run([sys.executable, "-m", "calm.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
