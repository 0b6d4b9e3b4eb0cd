"""Dual-stream network: shared residual trunk, synthesizer and content streams."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .transforms import N_COMPRESSION, N_SPEED

PARAM_GROUPS = ("backbone", "synth_stream", "synth_head", "content_stream", "content_heads", "final_head")


@dataclass(frozen=True)
class ModelConfig:
    stage_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    n_synth_classes: int = 2
    n_compression: int = N_COMPRESSION
    n_speed: int = N_SPEED
    init: str = "random"
    pretrained_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.stage_channels) != 4:
            raise ValueError("stage_channels needs four entries")
        if self.n_synth_classes < 2:
            raise ValueError("n_synth_classes must be at least 2 (real + one synthesizer)")
        if self.init not in ("random", "pretrained_backbone"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "pretrained_backbone" and not self.pretrained_path:
            raise ValueError("pretrained_backbone init needs pretrained_path")

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[3]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def small(cls, **kw) -> "ModelConfig":
        """Narrow variant for tests and desk-scale runs."""
        return cls(stage_channels=(16, 32, 64, 128), **kw)


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch)
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


def residual_stage(in_ch: int, out_ch: int, stride: int) -> nn.Sequential:
    return nn.Sequential(BasicBlock(in_ch, out_ch, stride), BasicBlock(out_ch, out_ch, 1))


class Backbone(nn.Module):
    """ResNet18 stem and its first three stages."""

    def __init__(self, channels):
        super().__init__()
        c0, c1, c2, _ = channels
        self.conv1 = nn.Conv2d(1, c0, 7, 2, 3, bias=False)
        self.bn1 = nn.BatchNorm2d(c0)
        self.maxpool = nn.MaxPool2d(3, 2, 1)
        self.layer1 = residual_stage(c0, c0, 1)
        self.layer2 = residual_stage(c0, c1, 2)
        self.layer3 = residual_stage(c1, c2, 2)

    def forward(self, x):
        x = self.maxpool(F.relu(self.bn1(self.conv1(x))))
        return self.layer3(self.layer2(self.layer1(x)))


class Stream(nn.Module):
    """Fourth residual stage followed by global average pooling."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.layer4 = residual_stage(in_ch, out_ch, 2)

    def forward(self, h):
        return self.layer4(h).mean(dim=(2, 3))


@dataclass
class ModelOutputs:
    f_s: torch.Tensor
    f_c: torch.Tensor
    logits_synth: torch.Tensor
    logits_comp: torch.Tensor
    logits_speed: torch.Tensor
    logit_final: torch.Tensor
    f_cls: torch.Tensor
    hidden: torch.Tensor


class DualStreamDetector(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        ch = config.stage_channels
        n = config.feature_dim
        self.backbone = Backbone(ch)
        self.synth_stream = Stream(ch[2], ch[3])
        self.content_stream = Stream(ch[2], ch[3])
        self.synth_head = nn.Linear(n, config.n_synth_classes)
        self.comp_head = nn.Linear(n, config.n_compression)
        self.speed_head = nn.Linear(n, config.n_speed)
        self.final_head = nn.Linear(2 * n, 1)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "backbone": list(self.backbone.parameters()),
            "synth_stream": list(self.synth_stream.parameters()),
            "synth_head": list(self.synth_head.parameters()),
            "content_stream": list(self.content_stream.parameters()),
            "content_heads": list(self.comp_head.parameters()) + list(self.speed_head.parameters()),
            "final_head": list(self.final_head.parameters()),
        }

    def classify(self, f_c: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        """Final real/fake logit for a (content, synthesizer) feature pair."""
        return self.final_head(torch.cat([f_c, f_s], dim=1)).squeeze(1)

    def synth_logits_frozen(self, f_c: torch.Tensor) -> torch.Tensor:
        """Synthesizer head applied to content features with the head's weights detached."""
        return F.linear(f_c, self.synth_head.weight.detach(), self.synth_head.bias.detach())

    def forward(self, spec: torch.Tensor) -> ModelOutputs:
        if spec.ndim == 3:
            spec = spec.unsqueeze(1)
        if spec.ndim != 4 or spec.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) spectrograms, got {tuple(spec.shape)}")
        hidden = self.backbone(spec)
        f_s = self.synth_stream(hidden)
        f_c = self.content_stream(hidden)
        f_cls = torch.cat([f_c, f_s], dim=1)
        return ModelOutputs(
            f_s=f_s,
            f_c=f_c,
            logits_synth=self.synth_head(f_s),
            logits_comp=self.comp_head(f_c),
            logits_speed=self.speed_head(f_c),
            logit_final=self.final_head(f_cls).squeeze(1),
            f_cls=f_cls,
            hidden=hidden,
        )


def load_pretrained_resnet(model: DualStreamDetector, state: dict) -> list[str]:
    """Copy a torchvision-layout ResNet18 state dict into the model.

    ``conv1``/``bn1``/``layer1-3`` go to the trunk and ``layer4`` to both
    streams. Keys prefixed ``module.`` or ``audio.`` are accepted. Returns the
    model keys that were filled.
    """
    own = model.state_dict()
    filled = []
    for key, value in state.items():
        for prefix in ("module.", "audio.", "model."):
            if key.startswith(prefix):
                key = key[len(prefix):]
        targets = []
        if key.startswith("layer4."):
            targets = [f"synth_stream.{key}", f"content_stream.{key}"]
        elif key.split(".")[0] in ("conv1", "bn1", "layer1", "layer2", "layer3"):
            targets = [f"backbone.{key}"]
        for t in targets:
            if t in own and own[t].shape == value.shape:
                own[t] = value.clone()
                filled.append(t)
    model.load_state_dict(own)
    return filled


def build_model(config: ModelConfig, seed: int = 0) -> DualStreamDetector:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DualStreamDetector(config)
    if config.init == "pretrained_backbone":
        state = torch.load(config.pretrained_path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        if not load_pretrained_resnet(model, state):
            raise ValueError(f"no compatible ResNet18 tensors in {config.pretrained_path}")
    return model
