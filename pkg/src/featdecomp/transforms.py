"""Pseudo-label transforms: codec compression and speed change.

Compression grid (label -> setting), frozen::

    0 identity
    1 aac  16000    2 aac  32000    3 aac  64000
    4 opus 16000    5 opus 32000    6 opus 64000
    7 mp3  16000    8 mp3  32000    9 mp3  64000

Speed grid: label ``i`` -> factor ``0.5 + 0.1 * i`` for ``i`` in 0..15, so
label 5 is the unchanged speed 1.0.

Codecs run in-process through PyAV by default. If ``FEATDECOMP_FFMPEG`` names
an ffmpeg executable, it is used instead (PCM float32 16 kHz mono in and out
over pipes).
"""
from __future__ import annotations

import functools
import io
import logging
import os
import subprocess
from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, AudioClip, fix_length
from .resample import resample_by_step

log = logging.getLogger(__name__)

CODECS = ("aac", "opus", "mp3")
BITRATES = (16000, 32000, 64000)
N_COMPRESSION = 1 + len(CODECS) * len(BITRATES)
N_SPEED = 16
IDENTITY_SPEED_INDEX = 5
FFMPEG_ENV = "FEATDECOMP_FFMPEG"


class CodecUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class CompressionSetting:
    index: int
    codec: str
    bitrate: int | None = None

    @property
    def is_identity(self) -> bool:
        return self.codec == "identity"


@dataclass(frozen=True)
class SpeedSetting:
    index: int
    factor: float


COMPRESSION_GRID: tuple[CompressionSetting, ...] = (CompressionSetting(0, "identity"),) + tuple(
    CompressionSetting(1 + ci * len(BITRATES) + bi, codec, rate)
    for ci, codec in enumerate(CODECS)
    for bi, rate in enumerate(BITRATES)
)
SPEED_GRID: tuple[SpeedSetting, ...] = tuple(
    SpeedSetting(i, round(0.5 + 0.1 * i, 10)) for i in range(N_SPEED)
)


def compression_setting(index: int) -> CompressionSetting:
    return COMPRESSION_GRID[index]


def speed_setting(index: int) -> SpeedSetting:
    return SPEED_GRID[index]


def compression_index(codec: str, bitrate: int | None = None) -> int:
    for s in COMPRESSION_GRID:
        if s.codec == codec and s.bitrate == bitrate:
            return s.index
    raise KeyError((codec, bitrate))


def speed_index(factor: float) -> int:
    for s in SPEED_GRID:
        if abs(s.factor - factor) < 1e-9:
            return s.index
    raise KeyError(factor)


def apply_speed(clip: AudioClip, setting: SpeedSetting | float) -> AudioClip:
    """Play ``clip`` ``factor`` times faster (sinc resampling, Kaiser window)."""
    factor = setting.factor if isinstance(setting, SpeedSetting) else float(setting)
    if factor <= 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    if factor == 1.0:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    return AudioClip(resample_by_step(clip.samples, factor), clip.sample_rate)


# --- codec port -------------------------------------------------------------

_PYAV_CODECS = {"aac": ("aac", "adts"), "opus": ("libopus", "ogg"), "mp3": ("libmp3lame", "mp3")}
_FFMPEG_CODECS = {"aac": ("aac", "adts"), "opus": ("libopus", "ogg"), "mp3": ("libmp3lame", "mp3")}


def _pyav_roundtrip(x: np.ndarray, codec: str, bitrate: int) -> np.ndarray:
    try:
        import av
    except ImportError as exc:
        raise CodecUnavailable("PyAV is not installed") from exc
    encoder, fmt = _PYAV_CODECS[codec]
    buf = io.BytesIO()
    try:
        with av.open(buf, "w", format=fmt) as out:
            stream = out.add_stream(encoder, rate=SAMPLE_RATE)
            stream.bit_rate = bitrate
            stream.layout = "mono"
            frame = av.AudioFrame.from_ndarray(x.astype(np.float32)[None, :], format="flt", layout="mono")
            frame.sample_rate = SAMPLE_RATE
            for packet in stream.encode(frame):
                out.mux(packet)
            for packet in stream.encode(None):
                out.mux(packet)
        buf.seek(0)
        converter = av.AudioResampler(format="flt", layout="mono", rate=SAMPLE_RATE)
        chunks = []
        with av.open(buf, "r") as inp:
            for decoded in inp.decode(audio=0):
                chunks.extend(f.to_ndarray().reshape(-1) for f in converter.resample(decoded))
            chunks.extend(f.to_ndarray().reshape(-1) for f in converter.resample(None))
    except (av.error.FFmpegError, ValueError) as exc:
        raise CodecUnavailable(f"{codec} via PyAV failed: {exc}") from exc
    return np.concatenate(chunks).astype(np.float64) if chunks else np.zeros(0)


def _ffmpeg_roundtrip(x: np.ndarray, codec: str, bitrate: int, binary: str) -> np.ndarray:
    encoder, fmt = _FFMPEG_CODECS[codec]
    pcm = ["-f", "f32le", "-ar", str(SAMPLE_RATE), "-ac", "1"]
    try:
        encoded = subprocess.run(
            [binary, "-v", "error", *pcm, "-i", "pipe:0", "-c:a", encoder, "-b:a", str(bitrate),
             "-f", fmt, "pipe:1"],
            input=x.astype("<f4").tobytes(), capture_output=True, check=True,
        ).stdout
        decoded = subprocess.run(
            [binary, "-v", "error", "-f", fmt, "-i", "pipe:0", *pcm, "pipe:1"],
            input=encoded, capture_output=True, check=True,
        ).stdout
    except (OSError, subprocess.CalledProcessError) as exc:
        raise CodecUnavailable(f"{codec} via {binary} failed: {exc}") from exc
    return np.frombuffer(decoded, dtype="<f4").astype(np.float64)


def codec_roundtrip(x: np.ndarray, codec: str, bitrate: int) -> np.ndarray:
    """Encode then decode ``x`` (16 kHz mono); no delay compensation."""
    binary = os.environ.get(FFMPEG_ENV)
    if binary:
        return _ffmpeg_roundtrip(x, codec, bitrate, binary)
    return _pyav_roundtrip(x, codec, bitrate)


@functools.lru_cache(maxsize=None)
def codec_delay(codec: str, bitrate: int, backend: str | None = None) -> int:
    """Measure the codec's start offset once with a noise probe.

    ``backend`` only keys the cache so that switching ffmpeg binaries re-measures.
    """
    rng = np.random.default_rng(1234)
    probe = np.convolve(rng.standard_normal(SAMPLE_RATE), np.ones(4) / 4, mode="same") * 0.2
    y = codec_roundtrip(probe, codec, bitrate)
    max_lag = min(4096, max(0, y.shape[0] - 4000))
    head = probe[:4000]
    scores = [np.dot(y[d:d + 4000], head) for d in range(max_lag + 1)]
    return int(np.argmax(scores))


def apply_compression(clip: AudioClip, setting: CompressionSetting | int) -> AudioClip:
    if isinstance(setting, int):
        setting = compression_setting(setting)
    if setting.is_identity:
        return clip
    x = clip.samples
    delay = codec_delay(setting.codec, setting.bitrate, os.environ.get(FFMPEG_ENV))
    y = codec_roundtrip(x, setting.codec, setting.bitrate)[delay:delay + x.shape[0]]
    if y.shape[0] < x.shape[0]:
        y = np.pad(y, (0, x.shape[0] - y.shape[0]))
    return AudioClip(y, clip.sample_rate)


@functools.lru_cache(maxsize=1)
def available_compression() -> tuple[int, ...]:
    """Grid indices whose codec actually works here; identity is always in."""
    active = [0]
    tone = 0.1 * np.sin(np.arange(4000) * 0.05)
    for codec in CODECS:
        try:
            codec_roundtrip(tone, codec, BITRATES[0])
        except CodecUnavailable as exc:
            log.warning("codec %s unavailable, dropping its settings: %s", codec, exc)
            continue
        active.extend(s.index for s in COMPRESSION_GRID if s.codec == codec)
    return tuple(active)


def sample_pseudo_labeled(clip: AudioClip, rng: np.random.Generator,
                          compression: tuple[int, ...] | None = None,
                          crop: str = "train_random") -> tuple[AudioClip, int, int]:
    """Compress, then change speed, then fix the length; return both labels."""
    if compression is None:
        compression = available_compression()
    comp = int(compression[int(rng.integers(len(compression)))])
    speed = int(rng.integers(N_SPEED))
    out = apply_compression(clip, comp)
    out = apply_speed(out, SPEED_GRID[speed])
    out = fix_length(out, crop, rng)
    return out, comp, speed
