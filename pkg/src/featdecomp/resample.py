"""Band-limited resampling by Kaiser-windowed sinc interpolation.

The inner loop lives in a compiled extension (``featdecomp._resample``) with a
numpy implementation as fallback. Set ``FEATDECOMP_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the active one.
"""
from __future__ import annotations

import functools
import os

import numpy as np

from . import _resample_py

if os.environ.get("FEATDECOMP_PURE_PYTHON"):
    _interpolate = _resample_py.interpolate
    BACKEND = "python"
else:
    try:
        from ._resample import interpolate as _interpolate

        BACKEND = "cython"
    except ImportError:
        _interpolate = _resample_py.interpolate
        BACKEND = "python"

ZERO_CROSSINGS = 16
KAISER_BETA = 8.6
OVERSAMPLE = 512
ROLLOFF = 0.97


@functools.lru_cache(maxsize=8)
def kaiser_sinc_table(zeros: int = ZERO_CROSSINGS, beta: float = KAISER_BETA,
                      oversample: int = OVERSAMPLE) -> np.ndarray:
    """Tabulate ``sinc(u) * kaiser(u / zeros)`` for ``u`` in ``[0, zeros]``."""
    u = np.arange(zeros * oversample + 1, dtype=np.float64) / oversample
    window = np.i0(beta * np.sqrt(np.clip(1.0 - (u / zeros) ** 2, 0.0, None))) / np.i0(beta)
    table = np.sinc(u) * window
    table.setflags(write=False)
    return table


def resample_by_step(x: np.ndarray, step: float, n_out: int | None = None,
                     backend: str | None = None) -> np.ndarray:
    """Read ``x`` at positions ``0, step, 2*step, ...``.

    ``step > 1`` shortens the signal and low-passes it first so that content
    above the new Nyquist rate does not alias; ``step < 1`` lengthens it.
    The default output length is ``round(len(x) / step)``.
    """
    if step <= 0 or not np.isfinite(step):
        raise ValueError(f"step must be positive and finite, got {step}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    if n_out is None:
        n_out = int(round(x.shape[0] / step))
    if step == 1.0 and n_out == x.shape[0]:
        return x.copy()
    cutoff = ROLLOFF / step if step > 1.0 else 1.0
    fn = _interpolate
    if backend == "python":
        fn = _resample_py.interpolate
    elif backend == "cython":
        from ._resample import interpolate as fn
    elif backend is not None:
        raise ValueError(f"unknown backend {backend!r}")
    return fn(x, float(step), int(n_out), float(cutoff), kaiser_sinc_table(),
              OVERSAMPLE, ZERO_CROSSINGS)


def resample(x: np.ndarray, orig_sr: int, target_sr: int, backend: str | None = None) -> np.ndarray:
    if orig_sr == target_sr:
        return np.asarray(x, dtype=np.float64).copy()
    return resample_by_step(x, orig_sr / target_sr, backend=backend)
