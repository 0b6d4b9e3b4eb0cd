"""Run configuration: one YAML file, defaults from the published setup.

Precedence: built-in defaults < config file < command-line flags.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .augmentation import BlendConfig
from .losses import LossConfig
from .training import Ablation, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    stage_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    init: str = "random"
    pretrained_path: str | None = None


@dataclass(frozen=True)
class DataSection:
    manifest: str = ""
    protocol: str = "inner"
    split_seed: int = 0
    inner_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    train_synths: tuple[str, ...] = ("MelGAN", "PWG")
    real_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    fake_ratios: tuple[float, float] = (0.8, 0.2)
    train_val_ratios: tuple[float, float] = (0.8, 0.2)
    test_manifests: tuple[str, ...] = ()
    source_language: str = "en"
    target_language: str = ""
    spec_cache_dir: str | None = None
    cache_audio: bool = True


ABLATIONS = {
    "no-shuffle": "drop the shuffled-feature focal loss",
    "no-blend": "drop feature blending",
    "no-aug": "drop both feature augmentations",
    "no-adv": "drop the adversarial term",
    "no-con-s": "drop the synthesizer contrastive loss",
    "no-con-cls": "drop the fused-feature contrastive loss",
    "no-pseudo": "skip codec/speed transforms (content labels fixed to identity)",
    "no-synth-stream": "beta1 = 0",
    "no-content-stream": "beta2 = 0",
    "single-stream": "betas (0, 0, 0, 0.5) and no augmentation",
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossConfig = field(default_factory=LossConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    ablate: tuple[str, ...] = ()
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# --- validation -----------------------------------------------------------------

def _where(source: str, node) -> str:
    return f"{source}:{node.start_mark.line + 1}" if node is not None else source


def _coerce(value, hint, path: str, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: {path} must be a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], path, where) for v in value)
        if len(value) != len(args):
            raise ConfigError(f"{where}: {path} must have {len(args)} entries")
        return tuple(_coerce(v, a, path, where) for v, a in zip(value, args))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: {path} must be true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: {path} must be an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: {path} must be a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: {path} must be a string")
        return value
    raise ConfigError(f"{where}: unsupported type for {path}")


def _build(cls, data, node, source: str, prefix: str = ""):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{_where(source, node)}: section {prefix or 'root'} must be a mapping")
    key_nodes = {}
    if node is not None and isinstance(node, yaml.MappingNode):
        key_nodes = {k.value: (k, v) for k, v in node.value}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        knode, vnode = key_nodes.get(key, (node, None))
        path = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"{_where(source, knode)}: unknown key '{path}'")
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, vnode, source, path + ".")
        else:
            kwargs[key] = _coerce(value, hint, path, _where(source, knode))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(source, node)}: {prefix or 'config'}: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    cfg = _build(RunConfig, data, node, source)
    return apply_ablations(cfg, cfg.ablate)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def apply_ablations(cfg: RunConfig, switches) -> RunConfig:
    """Apply ablation switches; applying the same switch twice is harmless."""
    ab, loss = cfg.train.ablation, cfg.loss
    for name in switches:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        if name == "no-shuffle":
            ab = replace(ab, feature_shuffle=False)
        elif name == "no-blend":
            ab = replace(ab, feature_blending=False)
        elif name == "no-aug":
            ab = replace(ab, feature_shuffle=False, feature_blending=False)
        elif name == "no-adv":
            ab = replace(ab, adversarial=False)
        elif name == "no-con-s":
            ab = replace(ab, synth_contrastive=False)
        elif name == "no-con-cls":
            ab = replace(ab, cls_contrastive=False)
        elif name == "no-pseudo":
            ab = replace(ab, pseudo_transforms=False)
        elif name == "no-synth-stream":
            loss = replace(loss, beta1=0.0)
        elif name == "no-content-stream":
            loss = replace(loss, beta2=0.0)
        elif name == "single-stream":
            loss = replace(loss, beta0=0.0, beta1=0.0, beta2=0.0, beta3=0.5)
            ab = replace(ab, feature_shuffle=False, feature_blending=False)
    ablate = tuple(dict.fromkeys(tuple(cfg.ablate) + tuple(switches)))
    return replace(cfg, loss=loss, train=replace(cfg.train, ablation=ab), ablate=ablate)


def resolve_paths(cfg: RunConfig, base_dir: str | Path) -> RunConfig:
    """Make data paths absolute so the snapshot works from any directory."""
    base = Path(base_dir)
    fix = lambda p: p if not p or Path(p).is_absolute() else str((base / p).resolve())
    data = cfg.data
    data = replace(data, manifest=fix(data.manifest), test_manifests=tuple(fix(m) for m in data.test_manifests),
                   spec_cache_dir=fix(data.spec_cache_dir) if data.spec_cache_dir else None)
    model = cfg.model
    if model.pretrained_path:
        model = replace(model, pretrained_path=fix(model.pretrained_path))
    return replace(cfg, data=data, model=model)


def with_overrides(cfg: RunConfig, *, seed: int | None = None, ablate=(), protocol: str | None = None,
                   out_dir: str | None = None) -> RunConfig:
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    if protocol is not None:
        cfg = replace(cfg, data=replace(cfg.data, protocol=protocol))
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    return apply_ablations(cfg, ablate)
