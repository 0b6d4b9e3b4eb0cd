import os

import numpy as np
import pytest
import torch

from featdecomp.manifest import FAKE_LABEL, REAL, REAL_LABEL, ManifestEntry
from featdecomp.model import ModelConfig, build_model
from featdecomp.training import Batch, ClipSource

torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))


def entry(fid, synth=REAL, lang="en", dataset=""):
    label = REAL_LABEL if synth == REAL else FAKE_LABEL
    return ManifestEntry(fid, f"/data/{fid}_{synth}.wav", label, synth, lang, dataset)


def paired_entries(n_ids, synths=("MelGAN", "PWG"), lang="en", prefix="u"):
    """One real and one fake per file id, fakes cycling through ``synths``."""
    out = []
    for i in range(n_ids):
        fid = f"{prefix}{i:04d}"
        out.append(entry(fid, REAL, lang))
        out.append(entry(fid, synths[i % len(synths)], lang))
    return out


def codec_backend_ok():
    try:
        from featdecomp.transforms import codec_roundtrip
        codec_roundtrip(np.zeros(1600), "mp3", 64000)
        return True
    except Exception:
        return False


@pytest.fixture
def small_model():
    def make(n_synth_classes=3, seed=0):
        return build_model(ModelConfig.small(n_synth_classes=n_synth_classes), seed=seed)
    return make


@pytest.fixture
def random_batch():
    def make(b=4, n_synth=3, seed=0, size=257):
        g = torch.Generator().manual_seed(seed)
        y = torch.tensor([i % 2 for i in range(b)], dtype=torch.float32)
        y_s = torch.where(y == 1, 0, 1 + torch.arange(b) % (n_synth - 1))
        return Batch(
            spec=torch.randn(b, 1, size, size, generator=g),
            y=y,
            y_s=y_s.long(),
            y_c1=torch.randint(0, 10, (b,), generator=g),
            y_c2=torch.randint(0, 16, (b,), generator=g),
        )
    return make


@pytest.fixture
def toy_source():
    from featdecomp.synthetic import in_memory_clip
    return ClipSource(loader=in_memory_clip)


@pytest.fixture
def toy_entries():
    from featdecomp.synthetic import SYNTHESIZERS
    return lambda n_ids: paired_entries(n_ids, SYNTHESIZERS)


# --- acceptance reporting ---------------------------------------------------------

_VERDICTS: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown":
        return
    number, title = mark.args
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _VERDICTS[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        verdict, title, detail = _VERDICTS[number]
        line = f"criterion {number}: {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
