import json

import numpy as np
import pytest
import yaml

from featdecomp import transforms as T
from featdecomp.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from featdecomp.config import ABLATIONS, ConfigError, RunConfig, apply_ablations, load_config, parse_config
from featdecomp.evaluation import read_score_dump, roc_curve

# Published hyperparameters, keyed by setting name.
FROZEN_DEFAULTS = {
    "batch_size": 128,
    "learning_rate": 1e-4,
    "weight_decay": 0.01,
    "patience": 3,
    "margin": 0.4,
    "betas": (1.0, 0.5, 0.5, 0.5),
    "noise_level": 10.0,
    "stage_channels": (64, 128, 256, 512),
    "n_compression": 10,
    "n_speed": 16,
    "focal_alpha": 0.25,
    "focal_gamma": 2.0,
    "inner_ratios": (0.6, 0.2, 0.2),
    "train_synths": ("MelGAN", "PWG"),
}


def test_defaults_match_published_table():
    cfg = RunConfig()
    actual = {
        "batch_size": cfg.train.batch_size,
        "learning_rate": cfg.train.learning_rate,
        "weight_decay": cfg.train.weight_decay,
        "patience": cfg.train.patience,
        "margin": cfg.loss.margin,
        "betas": cfg.loss.betas,
        "noise_level": cfg.blend.noise_level,
        "stage_channels": cfg.model.stage_channels,
        "n_compression": T.N_COMPRESSION,
        "n_speed": T.N_SPEED,
        "focal_alpha": cfg.loss.focal_alpha,
        "focal_gamma": cfg.loss.focal_gamma,
        "inner_ratios": cfg.data.inner_ratios,
        "train_synths": cfg.data.train_synths,
    }
    for key, expect in FROZEN_DEFAULTS.items():
        assert actual[key] == expect, key


def test_empty_file_gives_defaults():
    assert parse_config("") == RunConfig()


def test_default_dump_round_trips():
    assert parse_config(RunConfig().dump()) == RunConfig()


@pytest.mark.parametrize("text,line,needle", [
    ("train:\n  batch_size: 32\n  bogus: 1\n", 3, "unknown key 'train.bogus'"),
    ("train:\n  learning_rate: fast\n", 2, "train.learning_rate must be a number"),
    ("loss:\n  margin: 0.4\n  beta2: true\n", 3, "loss.beta2 must be a number"),
    ("model:\n  stage_channels: [1, 2]\n", 2, "must have 4 entries"),
    ("frobnicate: 1\n", 1, "unknown key 'frobnicate'"),
])
def test_config_errors_name_field_and_line(text, line, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "run.yaml")
    assert f"run.yaml:{line}:" in str(exc.value) and needle in str(exc.value)


def test_invalid_value_reported():
    with pytest.raises(ConfigError, match="margin"):
        parse_config("loss:\n  margin: 1.5\n", "run.yaml")


def test_ablations_idempotent_and_recorded():
    once = apply_ablations(RunConfig(), ["no-blend"])
    twice = apply_ablations(once, ["no-blend"])
    assert once == twice and once.ablate == ("no-blend",)
    assert not once.train.ablation.feature_blending and once.train.ablation.feature_shuffle
    assert parse_config(once.dump()) == once


def test_every_ablation_changes_something():
    base = RunConfig()
    for name in ABLATIONS:
        cfg = apply_ablations(base, [name])
        assert (cfg.loss, cfg.train.ablation) != (base.loss, base.train.ablation), name


def test_unknown_ablation():
    with pytest.raises(ConfigError):
        apply_ablations(RunConfig(), ["no-everything"])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")


# --- command line ------------------------------------------------------------------

def test_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["evaluate", "--checkpoint", "x", "--manifest", "y", "--protocol", "bogus",
                 "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["train", "--ablate", "no-such-switch"]) == EXIT_USAGE
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  batch_size: many\n")
    assert main(["train", "--config", str(bad)]) == EXIT_USAGE
    assert "bad.yaml:2:" in capsys.readouterr().err


def test_runtime_errors_exit_2(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert main(["evaluate", "--checkpoint", str(tmp_path / "missing.pt"), "--manifest", str(tmp_path / "m.jsonl"),
                 "--protocol", "inner", "--out-dir", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_init_config_writes_defaults(tmp_path):
    assert main(["init-config", "--output", str(tmp_path / "c.yaml")]) == EXIT_OK
    assert load_config(tmp_path / "c.yaml") == RunConfig()


SMALL_RUN = """\
model:
  stage_channels: [8, 16, 32, 64]
train:
  batch_size: 8
  max_epochs: 2
  eval_batch_size: 16
data:
  manifest: corpus/manifest.jsonl
  inner_ratios: [0.5, 0.25, 0.25]
"""


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Two CLI training runs with the same seed plus an evaluation of the first."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-corpus", "--out-dir", str(root / "corpus"), "--n-clips", "32", "--seed", "1"]) == EXIT_OK
    (root / "run.yaml").write_text(SMALL_RUN)
    for name in ("a", "b"):
        assert main(["train", "--config", str(root / "run.yaml"), "--seed", "7", "--ablate", "no-blend",
                     "--out-dir", str(root / name)]) == EXIT_OK
    for name in ("e1", "e2"):
        assert main(["evaluate", "--checkpoint", str(root / "a" / "best.pt"), "--manifest",
                     str(root / "corpus" / "manifest.jsonl"), "--protocol", "inner",
                     "--out-dir", str(root / name), "--label", "run-a"]) == EXIT_OK
    return root


def test_train_writes_outputs(runs):
    for name in ("best.pt", "last.pt", "train_log.jsonl", "resolved_config.yaml", "splits.jsonl"):
        assert (runs / "a" / name).is_file(), name
    records = [json.loads(line) for line in (runs / "a" / "train_log.jsonl").read_text().splitlines()]
    assert {r["type"] for r in records} == {"step", "epoch"}


def test_same_seed_identical_logs(runs):
    assert (runs / "a" / "train_log.jsonl").read_bytes() == (runs / "b" / "train_log.jsonl").read_bytes()


def test_snapshot_records_overrides(runs):
    snap = load_config(runs / "a" / "resolved_config.yaml")
    assert snap.train.seed == 7 and snap.ablate == ("no-blend",)
    assert not snap.train.ablation.feature_blending
    assert snap.out_dir == str(runs / "a")
    raw = yaml.safe_load((runs / "a" / "resolved_config.yaml").read_text())
    assert raw["train"]["ablation"]["feature_blending"] is False


def test_snapshot_rerun_reproduces(runs, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)  # relative paths in the snapshot would break here
    assert main(["train", "--config", str(runs / "a" / "resolved_config.yaml"),
                 "--out-dir", str(tmp_path / "c")]) == EXIT_OK
    assert (tmp_path / "c" / "train_log.jsonl").read_bytes() == (runs / "a" / "train_log.jsonl").read_bytes()


def test_eval_twice_byte_identical(runs):
    for name in ("report.json", "report.txt", "scores.jsonl"):
        assert (runs / "e1" / name).read_bytes() == (runs / "e2" / name).read_bytes(), name


def test_eval_average_is_group_mean(runs):
    rec = json.loads((runs / "e1" / "report.json").read_text())
    assert rec["average"]["auc"] == np.mean([g["auc"] for g in rec["groups"]])
    assert rec["average"]["eer"] == np.mean([g["eer"] for g in rec["groups"]])


def test_report_one_dump_matches_eval(runs, tmp_path, capsys):
    dump = str(runs / "e1" / "scores.jsonl")
    assert main(["report", dump, "--labels", "run-a", "--out", str(tmp_path / "t.txt")]) == EXIT_OK
    assert (tmp_path / "t.txt").read_text() == (runs / "e1" / "report.txt").read_text()


def test_report_two_dumps_two_rows(runs, tmp_path):
    dumps = [str(runs / "e1" / "scores.jsonl"), str(runs / "e2" / "scores.jsonl")]
    assert main(["report", *dumps, "--labels", "first", "second", "--out", str(tmp_path / "t.txt")]) == EXIT_OK
    rows = (tmp_path / "t.txt").read_text().splitlines()[2:]  # header and rule
    assert [r.split()[0] for r in rows] == ["first", "second"]


def test_report_label_count_mismatch(runs):
    assert main(["report", str(runs / "e1" / "scores.jsonl"), "--labels", "a", "b"]) == EXIT_USAGE


def test_report_plots(runs, tmp_path):
    pytest.importorskip("matplotlib")
    dump = runs / "e1" / "scores.jsonl"
    assert main(["report", str(dump), "--plot-roc", str(tmp_path / "roc.png"), "--plot-loss",
                 str(tmp_path / "loss.png"), "--train-logs", str(runs / "a" / "train_log.jsonl")]) == EXIT_OK
    assert (tmp_path / "roc.png").stat().st_size > 0 and (tmp_path / "loss.png").stat().st_size > 0
    for s, l in read_score_dump(dump).values():
        fpr, tpr, _ = roc_curve(s, l)
        assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0.0, 0.0, 1.0, 1.0)


def test_preprocess_cache(runs, tmp_path):
    assert main(["preprocess-cache", "--manifest", str(runs / "corpus" / "manifest.jsonl"),
                 "--cache-dir", str(tmp_path / "cache")]) == EXIT_OK
    assert len(list((tmp_path / "cache").glob("*.spec"))) == 32
