"""Pure-numpy windowed-sinc interpolation, used when the extension is absent.

``interpolate(x, step, n_out, cutoff, table, oversample, zeros)`` evaluates

    y[n] = cutoff * sum_k x[k] * h(|n*step - k| * cutoff)

where ``h`` is a tabulated Kaiser-windowed sinc sampled ``oversample`` times
per zero crossing over ``zeros`` crossings, read with linear interpolation.
Samples outside ``x`` are treated as zero.
"""
import numpy as np

_CHUNK = 4096


def interpolate(x, step, n_out, cutoff, table, oversample, zeros):
    x = np.ascontiguousarray(x, dtype=np.float64)
    table = np.ascontiguousarray(table, dtype=np.float64)
    n_in = x.shape[0]
    n_tab = table.shape[0]
    radius = zeros / cutoff
    taps = int(np.floor(2 * radius)) + 2
    out = np.zeros(n_out, dtype=np.float64)
    offsets = np.arange(taps)

    for start in range(0, n_out, _CHUNK):
        t = np.arange(start, min(start + _CHUNK, n_out), dtype=np.float64) * step
        k = np.ceil(t - radius).astype(np.int64)[:, None] + offsets[None, :]
        pos = np.abs(t[:, None] - k) * cutoff * oversample
        idx = pos.astype(np.int64)
        valid = (k >= 0) & (k < n_in) & (idx < n_tab - 1) & (k <= np.floor(t + radius)[:, None])
        idx = np.where(valid, idx, 0)
        frac = pos - idx
        h = table[idx] + frac * (table[idx + 1] - table[idx])
        samples = x[np.clip(k, 0, n_in - 1)]
        out[start:start + t.shape[0]] = np.where(valid, samples * h, 0.0).sum(axis=1) * cutoff
    return out
