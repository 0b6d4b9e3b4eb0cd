"""Audio loading, the three-second clip policy and the log-magnitude spectrogram."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .resample import resample

SAMPLE_RATE = 16000
CLIP_SAMPLES = 48000
N_FFT = 512
HOP_LENGTH = 187
LOG_FLOOR = 1e-7
SPEC_SHAPE = (N_FFT // 2 + 1, CLIP_SAMPLES // HOP_LENGTH + 1)


class AudioError(ValueError):
    """Audio could not be read or is unusable."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[-1]


def _read(path: Path) -> tuple[np.ndarray, int]:
    """Return (channels, samples) float64 data and the native rate."""
    import soundfile as sf

    try:
        data, sr = sf.read(str(path), dtype="float64", always_2d=True)
        return data.T, int(sr)
    except (sf.LibsndfileError, RuntimeError):
        pass
    # compressed containers that libsndfile cannot open (mp3, m4a, ...)
    import av

    try:
        with av.open(str(path)) as container:
            stream = container.streams.audio[0]
            sr = stream.rate
            nch = stream.codec_context.channels or 1
            # packed float output, whatever the codec's native sample format
            converter = av.AudioResampler(format="flt", layout=stream.layout.name, rate=sr)
            chunks = []
            for frame in container.decode(stream):
                chunks.extend(f.to_ndarray().reshape(-1) for f in converter.resample(frame))
            chunks.extend(f.to_ndarray().reshape(-1) for f in converter.resample(None))
    except (av.error.FFmpegError, IndexError, ValueError) as exc:
        raise AudioError(f"cannot decode {path}: {exc}") from exc
    if not chunks:
        return np.zeros((1, 0)), sr
    data = np.concatenate(chunks).astype(np.float64)
    return data.reshape(-1, nch).T, int(sr)


def normalize(samples: np.ndarray, sample_rate: int) -> AudioClip:
    """Downmix (channel mean) and resample to 16 kHz mono."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples.mean(axis=0)
    if samples.size == 0:
        raise AudioError("zero-length audio")
    if not np.all(np.isfinite(samples)):
        raise AudioError("non-finite sample values")
    if sample_rate != SAMPLE_RATE:
        samples = resample(samples, sample_rate, SAMPLE_RATE)
    return AudioClip(samples, SAMPLE_RATE)


def load_and_normalize(path: str | Path) -> AudioClip:
    path = Path(path)
    if not path.is_file():
        raise AudioError(f"no such audio file: {path}")
    data, sr = _read(path)
    return normalize(data, sr)


def fix_length(clip: AudioClip, mode: str = "eval_middle",
               rng: np.random.Generator | None = None,
               length: int = CLIP_SAMPLES) -> AudioClip:
    """Tile short clips with themselves; crop long ones randomly or centrally."""
    x = clip.samples
    n = x.shape[0]
    if n == 0:
        raise AudioError("cannot fix the length of an empty clip")
    if mode not in ("train_random", "eval_middle"):
        raise ValueError(f"unknown crop mode {mode!r}")
    if n == length:
        return clip
    if n < length:
        reps = -(-length // n)
        return AudioClip(np.tile(x, reps)[:length], clip.sample_rate)
    if mode == "eval_middle":
        start = (n - length) // 2
    else:
        if rng is None:
            raise ValueError("train_random cropping needs an rng")
        start = int(rng.integers(0, n - length + 1))
    return AudioClip(x[start:start + length].copy(), clip.sample_rate)


def stft_magnitude(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP_LENGTH) -> np.ndarray:
    """Centered, reflect-padded Hann STFT magnitude, shape (n_fft//2+1, frames)."""
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + x.shape[0] // hop
    window = np.hanning(n_fft + 1)[:-1]  # periodic Hann
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * window
    return np.abs(np.fft.rfft(frames, axis=1)).T


def log_spectrogram(clip: AudioClip | np.ndarray) -> np.ndarray:
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    if samples.ndim != 1 or samples.shape[0] != CLIP_SAMPLES:
        raise AudioError(f"expected {CLIP_SAMPLES} mono samples, got shape {samples.shape}")
    return np.log(stft_magnitude(samples) + LOG_FLOOR)


# Spectrogram cache file: 8-byte magic, uint32 ndim, ndim * uint32 dims (all
# little endian), then float32 values in row-major order.
_CACHE_MAGIC = b"FDSPEC01"


def save_spectrogram(path: str | Path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    header = _CACHE_MAGIC + struct.pack(f"<I{values.ndim}I", values.ndim, *values.shape)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes(order="C"))
    tmp.replace(path)


def load_spectrogram(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a spectrogram cache file")
    (ndim,) = struct.unpack_from("<I", raw, 8)
    shape = struct.unpack_from(f"<{ndim}I", raw, 12)
    offset = 12 + 4 * ndim
    count = int(np.prod(shape))
    if len(raw) - offset != 4 * count:
        raise ValueError(f"{path}: truncated cache file")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
