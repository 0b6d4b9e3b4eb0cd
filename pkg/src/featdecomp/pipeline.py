"""Config-driven glue between manifests, training and evaluation."""
from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, parse_config
from .evaluation import PROTOCOLS, format_table, run_protocol, write_score_dump
from .manifest import (
    ManifestEntry,
    SplitSet,
    load_manifest,
    split_cross_language,
    split_cross_method,
    split_inner,
    split_train_val,
    write_split_dump,
)
from .model import ModelConfig, build_model
from .training import ClipSource, Trainer, load_checkpoint, make_scorer

log = logging.getLogger(__name__)

SNAPSHOT_NAME = "resolved_config.yaml"


def build_splits(cfg: RunConfig) -> SplitSet:
    data = cfg.data
    if not data.manifest:
        raise ConfigError("data.manifest is not set")
    entries = load_manifest(data.manifest)
    seed = data.split_seed
    if data.protocol == "inner":
        return split_inner(entries, data.inner_ratios, seed)
    if data.protocol == "cross_method":
        return split_cross_method(entries, data.train_synths, data.real_ratios, data.fake_ratios, seed)
    if data.protocol == "cross_dataset":
        test: list[ManifestEntry] = []
        for m in data.test_manifests:
            test.extend(load_manifest(m))
        return split_train_val(entries, data.train_val_ratios, seed, test=test)
    if data.protocol == "cross_language":
        if not data.target_language:
            raise ConfigError("data.target_language is required for cross_language")
        return split_cross_language(entries, data.source_language, data.target_language,
                                    data.train_val_ratios, seed)
    raise ConfigError(f"unknown protocol {data.protocol!r}; choose from {PROTOCOLS}")


def model_config_for(cfg: RunConfig, splits: SplitSet) -> ModelConfig:
    return ModelConfig(stage_channels=cfg.model.stage_channels,
                       n_synth_classes=len(splits.synthesizer_vocab),
                       init=cfg.model.init, pretrained_path=cfg.model.pretrained_path)


def train_from_config(cfg: RunConfig, source: ClipSource | None = None):
    """Split, train and write checkpoints, log, split dump and config snapshot.

    Relative data paths are taken relative to the working directory; call
    :func:`featdecomp.config.resolve_paths` first to anchor them elsewhere.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT_NAME).write_text(cfg.dump(), encoding="utf-8")
    splits = build_splits(cfg)
    write_split_dump(out / "splits.jsonl", splits)
    log_path = out / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()
    if source is None:
        source = ClipSource(cache_audio=cfg.data.cache_audio, spec_cache_dir=cfg.data.spec_cache_dir)
    model = build_model(model_config_for(cfg, splits), seed=cfg.train.seed)
    trainer = Trainer(model, splits, cfg.train, cfg.loss, cfg.blend, source, log_path,
                      extra={"run_config": cfg.to_dict()})
    result = trainer.fit(out)
    return result, splits


def test_entries_for(protocol: str, entries: list[ManifestEntry], split_tags: list, run_cfg: RunConfig | None,
                     target_language: str | None = None) -> list[ManifestEntry]:
    """Pick the clips to score.

    Split dumps contribute their ``test`` rows. Plain manifests are re-split
    with the training run's settings (inner, cross_method), used whole
    (cross_dataset) or filtered to the target language (cross_language).
    """
    if any(t is not None for t in split_tags):
        return [e for e, t in zip(entries, split_tags) if t == "test"]
    if protocol in ("inner", "cross_method"):
        if run_cfg is None:
            raise ConfigError("re-splitting needs the run config stored in the checkpoint")
        fake_cfg = replace(run_cfg, data=replace(run_cfg.data, protocol=protocol))
        if protocol == "inner":
            return split_inner(entries, fake_cfg.data.inner_ratios, fake_cfg.data.split_seed).test
        return split_cross_method(entries, fake_cfg.data.train_synths, fake_cfg.data.real_ratios,
                                  fake_cfg.data.fake_ratios, fake_cfg.data.split_seed).test
    if protocol == "cross_language":
        lang = target_language or (run_cfg.data.target_language if run_cfg else "")
        if not lang:
            raise ConfigError("cross_language evaluation needs a target language")
        return [e for e in entries if e.language == lang]
    return list(entries)


def evaluate_checkpoint(checkpoint: str | Path, manifest: str | Path, protocol: str, out_dir: str | Path,
                        target_language: str | None = None, source: ClipSource | None = None,
                        label: str = ""):
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    model, payload = load_checkpoint(checkpoint)
    run_dict = payload.get("extra", {}).get("run_config")
    run_cfg = parse_config(json.dumps(run_dict), "<checkpoint>") if run_dict else None
    entries, tags = load_manifest(manifest, with_splits=True)
    test = test_entries_for(protocol, entries, tags, run_cfg, target_language)
    if source is None:
        cache = run_cfg.data.spec_cache_dir if run_cfg else None
        source = ClipSource(cache_audio=False, spec_cache_dir=cache)
    report, scores = run_protocol(make_scorer(model, source), test, protocol, label=label or Path(checkpoint).stem)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_score_dump(out / "scores.jsonl", scores, protocol)
    (out / "report.json").write_text(json.dumps(report.to_record(), indent=2) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(format_table([report]), encoding="utf-8")
    return report
