"""Data pipeline, the optimisation step, early stopping and checkpoints."""
from __future__ import annotations

import copy
import io
import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .audio import AudioClip, fix_length, load_and_normalize, load_spectrogram, log_spectrogram, save_spectrogram
from .augmentation import BlendConfig, blend_features, shuffle_combine
from .evaluation import compute_auc, compute_eer
from .losses import (
    LossBreakdown,
    LossConfig,
    adversarial_uniform_loss,
    backward_scoped,
    binary_cross_entropy,
    binary_focal_loss,
    contrastive_loss,
    stream_classification_losses,
    total_loss,
    weighted_total,
)
from .manifest import ManifestEntry, SplitSet, oversample_real
from .model import DualStreamDetector, ModelConfig, build_model
from .transforms import IDENTITY_SPEED_INDEX, available_compression, sample_pseudo_labeled

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "featdecomp-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class Ablation:
    feature_shuffle: bool = True
    feature_blending: bool = True
    adversarial: bool = True
    synth_contrastive: bool = True
    cls_contrastive: bool = True
    pseudo_transforms: bool = True


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    decoupled_weight_decay: bool = True
    patience: int = 3
    max_epochs: int = 100
    seed: int = 0
    oversample: bool = True
    eval_batch_size: int = 64
    workers: int = 0
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (feature shuffle pairs samples)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


_STREAM_AUG, _STREAM_DATA, _STREAM_ORDER = 1, 2, 3


# --- data ---------------------------------------------------------------------

@dataclass
class Batch:
    spec: torch.Tensor
    y: torch.Tensor
    y_s: torch.Tensor
    y_c1: torch.Tensor
    y_c2: torch.Tensor


class ClipSource:
    """Loads and caches normalised audio for manifest entries.

    ``loader`` maps an entry to an :class:`AudioClip`; the default reads
    ``entry.path`` from disk.
    """

    def __init__(self, loader: Callable[[ManifestEntry], AudioClip] | None = None,
                 cache_audio: bool = True, spec_cache_dir: str | Path | None = None):
        self.loader = loader or (lambda e: load_and_normalize(e.path))
        self.cache_audio = cache_audio
        self.spec_cache_dir = Path(spec_cache_dir) if spec_cache_dir else None
        self._audio: dict[str, AudioClip] = {}
        self._eval_specs: dict[str, np.ndarray] = {}

    @staticmethod
    def key(entry: ManifestEntry) -> str:
        return f"{entry.file_id}\x1f{entry.synthesizer_id}"

    def audio(self, entry: ManifestEntry) -> AudioClip:
        k = self.key(entry)
        clip = self._audio.get(k)
        if clip is None:
            clip = self.loader(entry)
            if self.cache_audio:
                self._audio[k] = clip
        return clip

    def cache_path(self, entry: ManifestEntry) -> Path:
        digest = zlib.crc32(self.key(entry).encode("utf-8"))
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in entry.file_id)
        return self.spec_cache_dir / f"{safe}.{entry.synthesizer_id}.{digest:08x}.spec"

    def eval_spectrogram(self, entry: ManifestEntry) -> np.ndarray:
        """Middle-crop spectrogram, memoised and optionally persisted."""
        k = self.key(entry)
        spec = self._eval_specs.get(k)
        if spec is not None:
            return spec
        if self.spec_cache_dir is not None and self.cache_path(entry).is_file():
            spec = load_spectrogram(self.cache_path(entry))
        else:
            spec = log_spectrogram(fix_length(self.audio(entry), "eval_middle")).astype(np.float32)
            if self.spec_cache_dir is not None:
                save_spectrogram(self.cache_path(entry), spec)
        self._eval_specs[k] = spec
        return spec


def _train_item(source: ClipSource, entry: ManifestEntry, rng: np.random.Generator,
                pseudo: bool, compression: tuple[int, ...]):
    clip = source.audio(entry)
    if pseudo:
        clip, y_c1, y_c2 = sample_pseudo_labeled(clip, rng, compression)
    else:
        clip, y_c1, y_c2 = fix_length(clip, "train_random", rng), 0, IDENTITY_SPEED_INDEX
    return log_spectrogram(clip).astype(np.float32), y_c1, y_c2


def _collate(specs, entries, vocab, y_c1, y_c2) -> Batch:
    return Batch(
        spec=torch.from_numpy(np.stack(specs)).unsqueeze(1),
        y=torch.tensor([e.label for e in entries], dtype=torch.float32),
        y_s=torch.tensor([vocab.index(e.synthesizer_id) for e in entries], dtype=torch.long),
        y_c1=torch.tensor(y_c1, dtype=torch.long),
        y_c2=torch.tensor(y_c2, dtype=torch.long),
    )


def epoch_order(entries: Sequence[ManifestEntry], config: TrainConfig, epoch: int) -> list[list[int]]:
    """Batches of indices for one epoch; a trailing batch of one is dropped."""
    order = derive_rng(config.seed, _STREAM_ORDER, epoch).permutation(len(entries))
    batches = [order[i:i + config.batch_size].tolist() for i in range(0, len(order), config.batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def make_train_batch(source: ClipSource, entries: Sequence[ManifestEntry], indices: Sequence[int],
                     vocab: Sequence[str], config: TrainConfig, epoch: int,
                     pool: ThreadPoolExecutor | None = None) -> Batch:
    pseudo = config.ablation.pseudo_transforms
    compression = available_compression() if pseudo else (0,)

    def work(i):
        return _train_item(source, entries[i], derive_rng(config.seed, _STREAM_DATA, epoch, i), pseudo, compression)

    results = list(pool.map(work, indices)) if pool else [work(i) for i in indices]
    chosen = [entries[i] for i in indices]
    return _collate([r[0] for r in results], chosen, list(vocab), [r[1] for r in results], [r[2] for r in results])


# --- one optimisation step ---------------------------------------------------------

def make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    opt = torch.optim.AdamW if config.decoupled_weight_decay else torch.optim.Adam
    return opt(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)


def compute_losses(model: DualStreamDetector, batch: Batch, loss_config: LossConfig,
                   ablation: Ablation, blend_config: BlendConfig, rng: np.random.Generator):
    """One forward pass and every enabled loss term (disabled terms are 0.0)."""
    out = model(batch.spec)
    if not bool(torch.isfinite(out.logit_final).all() and torch.isfinite(out.f_cls).all()):
        bad = int((~torch.isfinite(batch.spec)).sum())
        raise TrainingError(f"non-finite forward activations, aborting (non-finite input values: {bad})")
    y = batch.y
    zero = out.logit_final.new_zeros(())
    terms = dict(cls=zero, cls_aug=zero, cls_s=zero, con_s=zero, cls_c=zero, adv=zero, con_cls=zero)

    f_c, f_s = out.f_c, out.f_s
    blending = ablation.feature_blending and blend_config.enabled
    if blending:
        f_c = blend_features(out.f_c, y.numpy(), blend_config, rng)
        f_s = blend_features(out.f_s, y.numpy(), blend_config, rng)
        logit = model.classify(f_c, f_s)
    else:
        logit = out.logit_final
    terms["cls"] = binary_cross_entropy(torch.sigmoid(logit), y)

    if ablation.feature_shuffle and loss_config.beta0 > 0:
        fused, y_star, _ = shuffle_combine(f_s, f_c, y.numpy(), rng)
        p_star = torch.sigmoid(model.final_head(fused).squeeze(1))
        terms["cls_aug"] = binary_focal_loss(p_star, torch.as_tensor(y_star), loss_config.focal_alpha,
                                             loss_config.focal_gamma)
    if loss_config.beta1 > 0 or loss_config.beta2 > 0:
        cls_s, cls_c = stream_classification_losses(out, batch.y_s, batch.y_c1, batch.y_c2)
        if loss_config.beta1 > 0:
            terms["cls_s"] = cls_s
            if ablation.synth_contrastive:
                terms["con_s"] = contrastive_loss(out.f_s, batch.y_s, loss_config.margin)
        if loss_config.beta2 > 0:
            terms["cls_c"] = cls_c
            if ablation.adversarial:
                terms["adv"] = adversarial_uniform_loss(model.synth_logits_frozen(out.f_c))
    if loss_config.beta3 > 0 and ablation.cls_contrastive:
        terms["con_cls"] = contrastive_loss(out.f_cls, y.long(), loss_config.margin)
    return out, terms


def train_step(model: DualStreamDetector, optimizer: torch.optim.Optimizer, batch: Batch,
               loss_config: LossConfig, ablation: Ablation, blend_config: BlendConfig,
               rng: np.random.Generator) -> LossBreakdown:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    _, terms = compute_losses(model, batch, loss_config, ablation, blend_config, rng)
    try:
        breakdown = total_loss(loss_config, **{k: v.detach() for k, v in terms.items()})
    except ValueError as exc:
        raise TrainingError(f"non-finite loss, aborting: {exc}; terms="
                            f"{ {k: float(v) for k, v in terms.items()} }") from exc
    main = weighted_total(loss_config, **{**terms, "adv": terms["adv"].new_zeros(())})
    backward_scoped(model, main, loss_config.beta2 * terms["adv"])
    optimizer.step()
    return breakdown


# --- evaluation ----------------------------------------------------------------

@torch.no_grad()
def score_entries(model: DualStreamDetector, source: ClipSource, entries: Sequence[ManifestEntry],
                  batch_size: int = 64) -> np.ndarray:
    """P(real) for each entry using middle-crop preprocessing."""
    model.eval()
    scores = []
    for i in range(0, len(entries), batch_size):
        chunk = entries[i:i + batch_size]
        spec = torch.from_numpy(np.stack([source.eval_spectrogram(e) for e in chunk])).unsqueeze(1)
        scores.append(torch.sigmoid(model(spec).logit_final).double().numpy())
    return np.concatenate(scores) if scores else np.zeros(0)


def make_scorer(model: DualStreamDetector, source: ClipSource, batch_size: int = 64):
    return lambda entries: score_entries(model, source, list(entries), batch_size)


# --- early stopping and fit ------------------------------------------------------

class EarlyStopping:
    """Stop once the metric has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int = 3):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.since_improvement = 0
        self.epoch = 0

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value > self.best:
            self.best, self.best_epoch, self.since_improvement = value, self.epoch, 0
        else:
            self.since_improvement += 1
        return self.should_stop

    @property
    def should_stop(self) -> bool:
        return self.since_improvement >= self.patience

    def state_dict(self) -> dict:
        return dict(vars(self))

    def load_state_dict(self, state: dict) -> None:
        for k, v in state.items():
            setattr(self, k, v)


@dataclass
class TrainState:
    epoch: int = 0              # epochs completed
    batch_in_epoch: int = 0     # batches completed inside the current epoch
    global_step: int = 0
    stopper: dict = field(default_factory=dict)
    best_state: dict | None = None
    stopped: bool = False


@dataclass
class FitResult:
    model: DualStreamDetector
    history: list[dict]
    best_epoch: int
    best_auc: float
    stopped_early: bool
    epochs_run: int


class Trainer:
    """Owns the model, optimiser and position in the run; resumable."""

    def __init__(self, model: DualStreamDetector, splits: SplitSet, train_config: TrainConfig,
                 loss_config: LossConfig = LossConfig(), blend_config: BlendConfig = BlendConfig(),
                 source: ClipSource | None = None, log_path: str | Path | None = None,
                 extra: dict | None = None):
        if not splits.train or not splits.validation:
            raise ValueError("training needs non-empty train and validation splits")
        self.model = model
        self.splits = splits
        self.config = train_config
        self.loss_config = loss_config
        self.blend_config = blend_config
        self.source = source or ClipSource()
        self.optimizer = make_optimizer(model, train_config)
        self.stopper = EarlyStopping(train_config.patience)
        self.state = TrainState()
        self.log_path = Path(log_path) if log_path else None
        self.extra = extra or {}
        self.history: list[dict] = []
        self.vocab = list(splits.synthesizer_vocab)
        train = list(splits.train)
        self.train_entries = oversample_real(train, train_config.seed) if train_config.oversample else train

    def _log(self, record: dict) -> None:
        self.history.append(record)
        if self.log_path is not None:
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")

    def step(self, batch: Batch) -> LossBreakdown:
        rng = derive_rng(self.config.seed, _STREAM_AUG, self.state.global_step)
        breakdown = train_step(self.model, self.optimizer, batch, self.loss_config, self.config.ablation,
                               self.blend_config, rng)
        self.state.global_step += 1
        return breakdown

    def validate(self) -> tuple[float, float]:
        entries = self.splits.validation
        scores = score_entries(self.model, self.source, entries, self.config.eval_batch_size)
        labels = np.array([e.label for e in entries])
        return compute_auc(scores, labels), compute_eer(scores, labels)

    def run_epoch(self, pool=None) -> bool:
        """Finish the current epoch, validate, and return whether to stop."""
        epoch = self.state.epoch + 1
        batches = epoch_order(self.train_entries, self.config, epoch)
        for b in range(self.state.batch_in_epoch, len(batches)):
            batch = make_train_batch(self.source, self.train_entries, batches[b], self.vocab, self.config,
                                     epoch, pool)
            breakdown = self.step(batch)
            self.state.batch_in_epoch = b + 1
            self._log({"type": "step", "epoch": epoch, "step": self.state.global_step, **breakdown.as_dict()})
        auc, eer = self.validate()
        improved = auc > self.stopper.best
        stop = self.stopper.update(auc)
        if improved:
            self.state.best_state = copy.deepcopy(self.model.state_dict())
        self.state.epoch = epoch
        self.state.batch_in_epoch = 0
        self.state.stopper = self.stopper.state_dict()
        self.state.stopped = stop
        self._log({"type": "epoch", "epoch": epoch, "val_auc": auc, "val_eer": eer,
                   "best_auc": self.stopper.best, "best_epoch": self.stopper.best_epoch,
                   "since_improvement": self.stopper.since_improvement, "stop": stop})
        log.info("epoch %d  val AUC %.4f  EER %.4f%s", epoch, auc, eer, "  (stop)" if stop else "")
        return stop

    def fit(self, checkpoint_dir: str | Path | None = None) -> FitResult:
        ckdir = Path(checkpoint_dir) if checkpoint_dir else None
        pool = ThreadPoolExecutor(self.config.workers) if self.config.workers > 0 else None
        try:
            while not self.state.stopped and self.state.epoch < self.config.max_epochs:
                self.run_epoch(pool)
                if ckdir is not None:
                    self.save(ckdir / "last.pt")
        finally:
            if pool:
                pool.shutdown()
        if self.state.best_state is not None:
            self.model.load_state_dict(self.state.best_state)
        if ckdir is not None:
            save_checkpoint(ckdir / "best.pt", self.model, extra=self._extra(best=True))
        return FitResult(self.model, self.history, self.stopper.best_epoch, self.stopper.best,
                         self.state.stopped, self.state.epoch)

    def _extra(self, best: bool = False) -> dict:
        return {**self.extra, "vocab": self.vocab, "best_auc": self.stopper.best,
                "best_epoch": self.stopper.best_epoch, "is_best": best}

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.model, self.optimizer, self.state, self._extra(),
                        configs={"train": _config_dict(self.config), "loss": asdict(self.loss_config),
                                 "blend": asdict(self.blend_config)})

    def restore(self, path: str | Path) -> None:
        payload = read_checkpoint(path)
        self.model.load_state_dict(payload["model_state"])
        if payload.get("optimizer_state") is not None:
            self.optimizer.load_state_dict(payload["optimizer_state"])
        if payload.get("train_state") is not None:
            self.state = TrainState(**payload["train_state"])
            self.stopper.load_state_dict(self.state.stopper)


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    return d


def fit(model: DualStreamDetector, splits: SplitSet, train_config: TrainConfig,
        loss_config: LossConfig = LossConfig(), blend_config: BlendConfig = BlendConfig(),
        source: ClipSource | None = None, log_path=None, checkpoint_dir=None) -> FitResult:
    return Trainer(model, splits, train_config, loss_config, blend_config, source, log_path).fit(checkpoint_dir)


# --- checkpoints -------------------------------------------------------------------

def save_checkpoint(path: str | Path, model: DualStreamDetector, optimizer=None, state: TrainState | None = None,
                    extra: dict | None = None, configs: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "train_state": asdict(state) if state is not None else None,
        "configs": configs or {},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises several unrelated types on corrupt archives
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a featdecomp checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {payload.get('version')} is not supported (expected {CHECKPOINT_VERSION})"
        )
    return payload


def load_checkpoint(path: str | Path) -> tuple[DualStreamDetector, dict]:
    payload = read_checkpoint(path)
    cfg = dict(payload["model_config"])
    cfg["init"] = "random"  # weights come from the checkpoint
    cfg["pretrained_path"] = None
    model = DualStreamDetector(ModelConfig(**cfg))
    try:
        model.load_state_dict(payload["model_state"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match the stored config: {exc}") from exc
    model.eval()
    return model, payload
