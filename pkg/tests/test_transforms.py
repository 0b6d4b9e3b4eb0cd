from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from featdecomp import transforms as T
from featdecomp.audio import CLIP_SAMPLES, AudioClip
from featdecomp.resample import resample_by_step

from conftest import codec_backend_ok

SR = 16000
needs_codec = pytest.mark.skipif(not codec_backend_ok(), reason="no codec backend (PyAV or ffmpeg)")

FROZEN_COMPRESSION = [
    (0, "identity", None),
    (1, "aac", 16000), (2, "aac", 32000), (3, "aac", 64000),
    (4, "opus", 16000), (5, "opus", 32000), (6, "opus", 64000),
    (7, "mp3", 16000), (8, "mp3", 32000), (9, "mp3", 64000),
]


def broadband(n=CLIP_SAMPLES, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / SR
    x = sum(0.05 * np.sin(2 * np.pi * f * t + rng.uniform(0, 6)) for f in rng.uniform(100, 7000, 40))
    return x + 0.02 * rng.standard_normal(n)


class ScriptedRng:
    """Stands in for a Generator: returns queued integers, then delegates."""

    def __init__(self, *values):
        self.values = list(values)
        self.rng = np.random.default_rng(0)

    def integers(self, *args, **kw):
        return self.values.pop(0) if self.values else self.rng.integers(*args, **kw)


# --- grids ------------------------------------------------------------------------

def test_compression_grid_frozen():
    assert T.N_COMPRESSION == len(T.COMPRESSION_GRID) == 10
    assert [(s.index, s.codec, s.bitrate) for s in T.COMPRESSION_GRID] == FROZEN_COMPRESSION
    assert [s.is_identity for s in T.COMPRESSION_GRID] == [True] + [False] * 9


def test_speed_grid_frozen():
    factors = [s.factor for s in T.SPEED_GRID]
    assert len(factors) == T.N_SPEED == 16
    np.testing.assert_allclose(factors, np.linspace(0.5, 2.0, 16), atol=1e-12)
    assert T.SPEED_GRID[T.IDENTITY_SPEED_INDEX].factor == 1.0 == T.SPEED_GRID[5].factor


@given(st.integers(0, 9))
def test_compression_bijection(i):
    s = T.compression_setting(i)
    assert T.compression_index(s.codec, s.bitrate) == i


@given(st.integers(0, 15))
def test_speed_bijection(i):
    assert T.speed_index(T.speed_setting(i).factor) == i


# --- speed ------------------------------------------------------------------------

def test_speed_one_is_identity():
    x = broadband(8000)
    y = T.apply_speed(AudioClip(x), T.speed_setting(5)).samples
    assert np.sqrt(np.mean((x - y) ** 2)) < 1e-6


def test_speed_two_halves_length():
    out = T.apply_speed(AudioClip(broadband()), 2.0)
    assert len(out) == 24000 == len(resample_by_step(broadband(), 2.0))
    assert out.sample_rate == SR


def test_speed_half_moves_400hz_to_200hz():
    x = 0.5 * np.sin(2 * np.pi * 400 * np.arange(16000) / SR)
    y = T.apply_speed(AudioClip(x), 0.5).samples
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y))))
    peak = np.fft.rfftfreq(len(y), 1 / SR)[np.argmax(spec)]
    assert abs(peak - 200.0) < 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 15), st.integers(100, 20000))
def test_speed_length_law(i, n):
    f = T.speed_setting(i).factor
    out = T.apply_speed(AudioClip(np.random.default_rng(n).standard_normal(n)), T.speed_setting(i))
    assert abs(len(out) - round(n / f)) <= 1


def test_speed_rejects_nonpositive():
    with pytest.raises(ValueError):
        T.apply_speed(AudioClip(np.zeros(10)), -1.0)


# --- compression ------------------------------------------------------------------

def test_identity_compression_bit_exact():
    clip = AudioClip(broadband())
    assert T.apply_compression(clip, 0) is clip


@pytest.mark.codec
@needs_codec
@pytest.mark.parametrize("index", range(1, 10))
def test_codec_preserves_length_and_alignment(index):
    x = broadband()
    y = T.apply_compression(AudioClip(x), index).samples
    assert y.shape == x.shape and np.all(np.isfinite(y))
    # delay compensation: best alignment is at lag 0
    lags = range(-64, 65)
    corr = [np.dot(x[1000 + d:40000 + d], y[1000:40000]) for d in lags]
    assert abs(list(lags)[int(np.argmax(corr))]) <= 2


@pytest.mark.codec
@needs_codec
@pytest.mark.parametrize("codec", T.CODECS)
def test_higher_bitrate_lower_error(codec):
    x = broadband(seed=1)
    err = {}
    for rate in (16000, 64000):
        y = T.apply_compression(AudioClip(x), T.compression_index(codec, rate)).samples
        err[rate] = np.sqrt(np.mean((x - y) ** 2))
    assert err[64000] < err[16000]


@pytest.mark.codec
@needs_codec
def test_all_codecs_available():
    assert T.available_compression() == tuple(range(10))


def test_missing_ffmpeg_binary_reports_unavailable(monkeypatch):
    monkeypatch.setenv(T.FFMPEG_ENV, "/nonexistent/ffmpeg")
    with pytest.raises(T.CodecUnavailable):
        T.codec_roundtrip(np.zeros(1600), "mp3", 64000)


def test_unavailable_codec_dropped_with_warning(monkeypatch, caplog):
    def fake(x, codec, bitrate):
        if codec == "opus":
            raise T.CodecUnavailable("no opus here")
        return x

    monkeypatch.setattr(T, "codec_roundtrip", fake)
    T.available_compression.cache_clear()
    try:
        with caplog.at_level("WARNING"):
            active = T.available_compression()
    finally:
        T.available_compression.cache_clear()
    assert active == (0, 1, 2, 3, 7, 8, 9)
    assert "opus" in caplog.text


# --- composed sampler -------------------------------------------------------------

def test_forced_identity_only_fixes_length():
    x = broadband()
    out, c1, c2 = T.sample_pseudo_labeled(AudioClip(x), ScriptedRng(0, 5))
    assert (c1, c2) == (0, 5)
    np.testing.assert_array_equal(out.samples, x)


def test_compression_then_speed_order(monkeypatch):
    calls = []
    monkeypatch.setattr(T, "apply_compression", lambda clip, s: calls.append("comp") or clip)
    real_speed = T.apply_speed
    monkeypatch.setattr(T, "apply_speed", lambda clip, s: calls.append("speed") or real_speed(clip, s))
    T.sample_pseudo_labeled(AudioClip(broadband(4000)), np.random.default_rng(0), tuple(range(10)))
    assert calls == ["comp", "speed"]


def test_label_frequencies_uniform(monkeypatch):
    monkeypatch.setattr(T, "apply_compression", lambda clip, s: clip)
    clip = AudioClip(np.random.default_rng(0).standard_normal(400))
    rng = np.random.default_rng(123)
    comp, speed = Counter(), Counter()
    for _ in range(10000):
        out, c1, c2 = T.sample_pseudo_labeled(clip, rng, tuple(range(10)))
        assert len(out) == CLIP_SAMPLES
        comp[c1] += 1
        speed[c2] += 1
    assert sorted(comp) == list(range(10)) and sorted(speed) == list(range(16))
    assert all(abs(n / 10000 - 0.1) <= 0.02 for n in comp.values())


@needs_codec
def test_sampler_deterministic():
    clip = AudioClip(broadband(20000))
    a = T.sample_pseudo_labeled(clip, np.random.default_rng(9))
    b = T.sample_pseudo_labeled(clip, np.random.default_rng(9))
    assert a[1:] == b[1:]
    assert a[0].samples.tobytes() == b[0].samples.tobytes()
