"""Loss terms of the dual-stream detector and their weighted combination."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.4
    beta0: float = 1.0  # shuffled-feature focal loss
    beta1: float = 0.5  # synthesizer stream
    beta2: float = 0.5  # content stream (pseudo labels + adversarial)
    beta3: float = 0.5  # fused-feature contrastive loss
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    synth_contrastive_weight: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.margin < 1.0:
            raise ValueError(f"margin must lie in [0, 1), got {self.margin}")
        for name in ("beta0", "beta1", "beta2", "beta3", "synth_contrastive_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def betas(self) -> tuple[float, float, float, float]:
        return (self.beta0, self.beta1, self.beta2, self.beta3)


# Field order here is the column order of the training log.
@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    cls_aug: float
    cls_s: float
    con_s: float
    cls_c: float
    adv: float
    con_cls: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def weighted_total(config: LossConfig, *, cls, cls_aug, cls_s, con_s, cls_c, adv, con_cls):
    """Combine sub-losses; works on floats and on tensors alike."""
    return (cls
            + config.beta0 * cls_aug
            + config.beta1 * (cls_s + config.synth_contrastive_weight * con_s)
            + config.beta2 * (cls_c + adv)
            + config.beta3 * con_cls)


def total_loss(config: LossConfig, *, cls=0.0, cls_aug=0.0, cls_s=0.0, con_s=0.0,
               cls_c=0.0, adv=0.0, con_cls=0.0) -> LossBreakdown:
    terms = dict(cls=cls, cls_aug=cls_aug, cls_s=cls_s, con_s=con_s, cls_c=cls_c, adv=adv, con_cls=con_cls)
    terms = {k: float(v) for k, v in terms.items()}
    for k, v in terms.items():
        if not math.isfinite(v):
            raise ValueError(f"loss term {k} is not finite: {v}")
    return LossBreakdown(**terms, total=float(weighted_total(config, **terms)))


def contrastive_loss(z: torch.Tensor, y: torch.Tensor, margin: float = 0.4) -> torch.Tensor:
    """Margin cosine contrastive loss averaged over all B*B ordered pairs.

    Matching pairs pay ``1 - cos``; mismatched pairs pay ``max(cos - margin, 0)``.
    Self-pairs are included and cost nothing.
    """
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError(f"expected a (B, D) batch, got shape {tuple(z.shape)}")
    norms = z.norm(dim=1)
    if bool((norms == 0).any()):
        raise ValueError("contrastive loss is undefined for zero-norm feature vectors")
    unit = z / norms[:, None]
    sim = (unit @ unit.T).clamp(-1.0, 1.0)  # rounding can push self-similarity past 1
    same = y[:, None] == y[None, :]
    cost = torch.where(same, 1.0 - sim, torch.clamp(sim - margin, min=0.0))
    return cost.sum() / z.shape[0] ** 2


def adversarial_uniform_loss(logits: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the softmax against the uniform target, batch mean."""
    if logits.shape[-1] < 2:
        raise ValueError("need at least two classes (N_s >= 1)")
    if not bool(torch.isfinite(logits).all()):
        raise ValueError("non-finite logits")
    return -F.log_softmax(logits, dim=-1).mean(dim=-1).mean()


def binary_focal_loss(p: torch.Tensor, y: torch.Tensor, alpha: float = 0.25,
                      gamma: float = 2.0) -> torch.Tensor:
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = y.to(p.dtype)
    pos = -alpha * (1.0 - p) ** gamma * torch.log(p)
    neg = -(1.0 - alpha) * p ** gamma * torch.log(1.0 - p)
    return (y * pos + (1.0 - y) * neg).mean()


def binary_cross_entropy(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = y.to(p.dtype)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()


def _check_range(labels: torch.Tensor, n: int, name: str) -> None:
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= n):
        raise ValueError(f"{name} labels out of range [0, {n})")


def stream_classification_losses(outputs, y_s: torch.Tensor, y_c1: torch.Tensor,
                                  y_c2: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Synthesizer-stream CE and the summed compression + speed CE."""
    _check_range(y_s, outputs.logits_synth.shape[-1], "synthesizer")
    _check_range(y_c1, outputs.logits_comp.shape[-1], "compression")
    _check_range(y_c2, outputs.logits_speed.shape[-1], "speed")
    cls_s = F.cross_entropy(outputs.logits_synth, y_s)
    cls_c = F.cross_entropy(outputs.logits_comp, y_c1) + F.cross_entropy(outputs.logits_speed, y_c2)
    return cls_s, cls_c


def backward_scoped(model, main: torch.Tensor | None, adversarial: torch.Tensor | None) -> None:
    """Accumulate gradients with the adversarial term confined to the content stream.

    ``main`` back-propagates normally. ``adversarial`` is differentiated only
    with respect to the content-stream parameters (everything else is treated
    as frozen for it), reusing the same forward graph.
    """
    scoped = []
    if adversarial is not None and adversarial.requires_grad:
        params = model.param_groups()["content_stream"]
        grads = torch.autograd.grad(adversarial, params, retain_graph=main is not None, allow_unused=True)
        scoped = [(p, g) for p, g in zip(params, grads) if g is not None]
    if main is not None and main.requires_grad:
        main.backward()
    for p, g in scoped:
        p.grad = g.clone() if p.grad is None else p.grad + g


def gradient_scope_adversarial(model, spec: torch.Tensor) -> dict[str, float]:
    """Per-group gradient norms produced by the adversarial term alone."""
    model.zero_grad(set_to_none=True)
    out = model(spec)
    adv = adversarial_uniform_loss(model.synth_logits_frozen(out.f_c))
    backward_scoped(model, None, adv)
    report = {}
    for name, params in model.param_groups().items():
        sq = sum(float(p.grad.pow(2).sum()) for p in params if p.grad is not None)
        report[name] = math.sqrt(sq)
    model.zero_grad(set_to_none=True)
    return report
