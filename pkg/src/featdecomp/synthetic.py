"""Toy corpus for desk-scale runs.

Genuine clips are band-limited noise bursts. Two stand-in "synthesizers"
produce harmonic tone mixtures with different harmonic recipes:
``harmonic_odd`` (odd partials, 1/k roll-off) and ``harmonic_dense`` (all
partials, 1/k^2 roll-off, slight vibrato). Each file ID has one genuine clip
and one fake, alternating between the two generators.
"""
from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from .audio import CLIP_SAMPLES, SAMPLE_RATE, AudioClip
from .manifest import FAKE_LABEL, REAL, REAL_LABEL, ManifestEntry, load_manifest, write_manifest

SYNTHESIZERS = ("harmonic_odd", "harmonic_dense")


def noise_burst(rng: np.random.Generator, n: int = CLIP_SAMPLES) -> np.ndarray:
    lo = rng.uniform(100, 600)
    hi = rng.uniform(2000, 6000)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
    spectrum[(freqs < lo) | (freqs > hi)] = 0
    x = np.fft.irfft(spectrum, n)
    # on/off envelope of 4-8 smoothed bursts
    env = np.zeros(n)
    for _ in range(rng.integers(4, 9)):
        start = rng.integers(0, n - 2000)
        length = rng.integers(2000, 12000)
        env[start:start + length] = 1.0
    env = np.convolve(env, np.hanning(801) / np.hanning(801).sum(), mode="same") + 0.05
    x *= env
    return 0.3 * x / (np.abs(x).max() + 1e-9)


def harmonic_tone(rng: np.random.Generator, kind: str, n: int = CLIP_SAMPLES) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(110, 260)
    if kind == "harmonic_odd":
        partials = [(k, 1.0 / k) for k in range(1, 16, 2)]
        phase = 2 * np.pi * f0 * t
    elif kind == "harmonic_dense":
        partials = [(k, 1.0 / k ** 2) for k in range(1, 13)]
        vibrato = 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t)
        phase = 2 * np.pi * f0 * np.cumsum(1 + vibrato) / SAMPLE_RATE
    else:
        raise ValueError(f"unknown generator {kind!r}")
    x = sum(a * np.sin(k * phase + rng.uniform(0, 2 * np.pi)) for k, a in partials if k * f0 < 7500)
    x += 0.003 * rng.standard_normal(n)
    return 0.3 * x / np.abs(x).max()


def make_corpus(out_dir: str | Path, n_clips: int = 400, seed: int = 0,
                language: str = "en", dataset: str = "synthetic") -> list[ManifestEntry]:
    """Write ``n_clips`` WAV files plus ``manifest.jsonl`` into ``out_dir``.

    Returns the entries as read back, i.e. with resolved audio paths.
    """
    import soundfile as sf

    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_clips):
        fid = f"utt{i // 2:04d}"
        if i % 2 == 0:
            synth, label, x = REAL, REAL_LABEL, noise_burst(rng)
        else:
            synth = SYNTHESIZERS[(i // 2) % 2]
            label, x = FAKE_LABEL, harmonic_tone(rng, synth)
        rel = f"wav/{fid}_{synth}.wav"
        sf.write(out_dir / rel, x.astype(np.float32), SAMPLE_RATE, subtype="FLOAT")
        entries.append(ManifestEntry(fid, rel, label, synth, language, dataset, len(x) / SAMPLE_RATE))
    write_manifest(out_dir / "manifest.jsonl", entries)
    return load_manifest(out_dir / "manifest.jsonl")


def in_memory_clip(entry: ManifestEntry, seed: int = 0) -> AudioClip:
    """Deterministic clip for an entry without touching the filesystem."""
    key = zlib.crc32(f"{entry.file_id}/{entry.synthesizer_id}".encode())
    rng = np.random.default_rng([seed, key])
    if entry.synthesizer_id == REAL:
        return AudioClip(noise_burst(rng))
    return AudioClip(harmonic_tone(rng, entry.synthesizer_id))
