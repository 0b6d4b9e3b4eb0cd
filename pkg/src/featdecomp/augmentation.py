"""Synthesizer feature augmentation: in-class style blending and feature shuffle.

Random draws come from a ``numpy.random.Generator`` so that the torch graph
only sees constants and gradients flow through the features themselves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .manifest import REAL_LABEL


@dataclass(frozen=True)
class BlendConfig:
    noise_level: float = 10.0
    ratio_low: float = 0.5
    ratio_high: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        if not 0.0 <= self.ratio_low <= self.ratio_high <= 1.0:
            raise ValueError("blend ratio range must lie inside [0, 1]")


def _stats(z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    mu = z.mean(dim=-1, keepdim=True)
    sigma = z.std(dim=-1, keepdim=True, unbiased=False)
    return mu, sigma


def blend_pair(z_i: torch.Tensor, z_j: torch.Tensor, r, gain=1.0, offset=0.0) -> torch.Tensor:
    """Restyle ``z_i`` with statistics mixed toward ``z_j``, then add noise.

    Rows are feature vectors. ``r`` is the weight kept on ``z_i``'s own
    statistics; ``gain`` multiplies and ``offset`` is added afterwards.
    """
    mu_i, sd_i = _stats(z_i)
    mu_j, sd_j = _stats(z_j)
    if bool((sd_i == 0).any()):
        raise ValueError("cannot blend a feature vector with zero standard deviation")
    r = torch.as_tensor(r, dtype=z_i.dtype, device=z_i.device)
    if r.ndim == 1:
        r = r[:, None]
    mu = r * mu_i + (1 - r) * mu_j
    sd = r * sd_i + (1 - r) * sd_j
    out = sd * (z_i - mu_i) / sd_i + mu
    return out * gain + offset


def draw_partners(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """For each row, a uniformly chosen row with the same real/fake label."""
    y = np.asarray(y)
    partners = np.empty(len(y), dtype=np.int64)
    for label in np.unique(y):
        members = np.flatnonzero(y == label)
        partners[members] = members[rng.integers(0, len(members), size=len(members))]
    return partners


def blend_features(z: torch.Tensor, y, config: BlendConfig, rng: np.random.Generator,
                   return_partners: bool = False):
    if not config.enabled:
        return (z, np.arange(z.shape[0])) if return_partners else z
    y = np.asarray(y.cpu() if isinstance(y, torch.Tensor) else y)
    b, d = z.shape
    partners = draw_partners(y, rng)
    r = rng.uniform(config.ratio_low, config.ratio_high, size=b)
    r1 = rng.uniform(0.0, config.noise_level, size=b)
    r2 = rng.uniform(0.0, config.noise_level, size=b)
    gain = r1 * rng.beta(2, 5, size=b) * rng.uniform(-1.0, 1.0, size=b) + 1.0
    offset = (r2 * rng.beta(2, 5, size=b))[:, None] * rng.standard_normal((b, d))
    as_t = lambda a: torch.as_tensor(a, dtype=z.dtype, device=z.device)
    out = blend_pair(z, z[torch.as_tensor(partners)], as_t(r), as_t(gain)[:, None], as_t(offset))
    return (out, partners) if return_partners else out


def shuffle_labels(y, perm) -> np.ndarray:
    """Label of the pair (content of ``perm[k]``, synthesizer of ``k``): real iff both real."""
    y = np.asarray(y)
    perm = np.asarray(perm)
    both = (y == REAL_LABEL) & (y[perm] == REAL_LABEL)
    return np.where(both, REAL_LABEL, 1 - REAL_LABEL)


def shuffle_combine(f_s: torch.Tensor, f_c: torch.Tensor, y, rng: np.random.Generator):
    """Pair every synthesizer feature with a permuted content feature.

    Returns ``(fused, y_star, perm)`` with ``fused[k] = f_c[perm[k]] || f_s[k]``.
    """
    b = f_s.shape[0]
    if b < 2:
        raise ValueError("feature shuffle needs a batch of at least 2")
    y = np.asarray(y.cpu() if isinstance(y, torch.Tensor) else y)
    perm = rng.permutation(b)
    fused = torch.cat([f_c[torch.as_tensor(perm)], f_s], dim=1)
    return fused, shuffle_labels(y, perm), perm
