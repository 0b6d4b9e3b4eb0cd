"""Dataset manifests, split protocols and real-class oversampling.

A manifest is UTF-8 JSON Lines, one clip per line::

    {"file_id": "19_198_000000_000000", "path": "wavs/19_198.wav", "label": 1,
     "synthesizer_id": "real", "language": "en", "dataset": "librisevoc"}

``label`` is 1 for genuine speech and 0 for synthetic speech; genuine rows
carry ``synthesizer_id == "real"``. ``dataset`` and ``duration_s`` are
optional. Fakes derived from a genuine clip share its ``file_id``. Split dumps
use the same records plus a ``split`` field.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

REAL = "real"
REAL_LABEL = 1
FAKE_LABEL = 0
SPLITS = ("train", "validation", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    file_id: str
    path: str
    label: int
    synthesizer_id: str
    language: str = ""
    dataset: str = ""
    duration_s: float | None = None

    def __post_init__(self):
        if not self.file_id:
            raise ManifestError("file_id must be non-empty")
        if not self.path:
            raise ManifestError("path must be non-empty")
        if self.label not in (REAL_LABEL, FAKE_LABEL):
            raise ManifestError(f"label must be 0 (fake) or 1 (real), got {self.label!r}")
        if (self.label == REAL_LABEL) != (self.synthesizer_id == REAL):
            raise ManifestError(
                f"label={self.label} is inconsistent with synthesizer_id={self.synthesizer_id!r}"
            )

    @property
    def is_real(self) -> bool:
        return self.label == REAL_LABEL

    def to_record(self) -> dict:
        rec = asdict(self)
        if rec["duration_s"] is None:
            del rec["duration_s"]
        return rec


@dataclass
class SplitSet:
    train: list[ManifestEntry]
    validation: list[ManifestEntry]
    test: list[ManifestEntry]
    synthesizer_vocab: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.synthesizer_vocab:
            self.synthesizer_vocab = build_vocab(self.train)

    @property
    def n_synthesizers(self) -> int:
        return len(self.synthesizer_vocab) - 1

    def synth_index(self, synthesizer_id: str) -> int:
        return self.synthesizer_vocab.index(synthesizer_id)

    def items(self):
        return (("train", self.train), ("validation", self.validation), ("test", self.test))


def build_vocab(entries: Iterable[ManifestEntry]) -> list[str]:
    return [REAL] + sorted({e.synthesizer_id for e in entries} - {REAL})


_FIELDS = {"file_id", "path", "label", "synthesizer_id", "language", "dataset", "duration_s", "split"}


def _parse_record(rec: dict) -> ManifestEntry:
    if not isinstance(rec, dict):
        raise ManifestError("record is not an object")
    unknown = set(rec) - _FIELDS
    if unknown:
        raise ManifestError(f"unknown fields {sorted(unknown)}")
    missing = {"file_id", "path", "label", "synthesizer_id"} - set(rec)
    if missing:
        raise ManifestError(f"missing fields {sorted(missing)}")
    label = rec["label"]
    if isinstance(label, str):
        label = {"real": 1, "fake": 0, "1": 1, "0": 0}.get(label.strip().lower(), label)
    if isinstance(label, bool) or not isinstance(label, int):
        raise ManifestError(f"bad label {rec['label']!r}")
    duration = rec.get("duration_s")
    return ManifestEntry(
        file_id=str(rec["file_id"]),
        path=str(rec["path"]),
        label=label,
        synthesizer_id=str(rec["synthesizer_id"]),
        language=str(rec.get("language", "")),
        dataset=str(rec.get("dataset", "")),
        duration_s=None if duration is None else float(duration),
    )


def load_manifest(path: str | Path, with_splits: bool = False):
    """Read a manifest; relative audio paths resolve against its directory.

    With ``with_splits=True`` also return the per-line ``split`` values (None
    where absent), which is how split dumps are read back.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    splits: list[str | None] = []
    seen: set[tuple[str, str]] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entry = _parse_record(rec)
            except (json.JSONDecodeError, ManifestError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            key = (entry.file_id, entry.synthesizer_id)
            if key in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate (file_id, synthesizer_id) {key}")
            seen.add(key)
            if not Path(entry.path).is_absolute():
                entry = _with_path(entry, str(path.parent / entry.path))
            entries.append(entry)
            splits.append(rec.get("split"))
    return (entries, splits) if with_splits else entries


def _with_path(entry: ManifestEntry, new_path: str) -> ManifestEntry:
    rec = entry.to_record()
    rec["path"] = new_path
    return ManifestEntry(**rec)


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")


def write_split_dump(path: str | Path, splits: SplitSet) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for name, part in splits.items():
            for e in part:
                rec = e.to_record()
                rec["split"] = name
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_split_dump(path: str | Path) -> SplitSet:
    entries, tags = load_manifest(path, with_splits=True)
    parts: dict[str, list[ManifestEntry]] = {name: [] for name in SPLITS}
    for e, tag in zip(entries, tags):
        if tag not in parts:
            raise ManifestError(f"{path}: entry {e.file_id} has no valid split tag")
        parts[tag].append(e)
    return SplitSet(parts["train"], parts["validation"], parts["test"])


# --- splitting ----------------------------------------------------------------

def _check_ratios(ratios: Sequence[float]) -> None:
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {tuple(ratios)}")


def allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items over ``ratios``."""
    quotas = [n * r for r in ratios]
    counts = [int(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _partition(items: list, ratios: Sequence[float], rng: random.Random) -> list[list]:
    items = list(items)
    rng.shuffle(items)
    out, start = [], 0
    for count in allocate(len(items), ratios):
        out.append(items[start:start + count])
        start += count
    return out


def _unique_ids(entries: Iterable[ManifestEntry]) -> list[str]:
    return sorted({e.file_id for e in entries})


def split_inner(entries: Sequence[ManifestEntry], ratios: Sequence[float] = (0.6, 0.2, 0.2),
                seed: int = 0) -> SplitSet:
    """Partition file IDs by ratio; each fake follows the split of its ID."""
    _check_ratios(ratios)
    if len(ratios) != 3:
        raise ValueError("inner split needs three ratios")
    ids = _unique_ids(entries)
    if len(ids) < len(ratios):
        raise ValueError(f"need at least {len(ratios)} unique file_ids, got {len(ids)}")
    groups = _partition(ids, ratios, random.Random(seed))
    where = {fid: k for k, group in enumerate(groups) for fid in group}
    parts: list[list[ManifestEntry]] = [[], [], []]
    for e in entries:
        parts[where[e.file_id]].append(e)
    return SplitSet(*parts)


def split_cross_method(entries: Sequence[ManifestEntry], train_synths: Iterable[str],
                       real_ratios: Sequence[float] = (0.6, 0.2, 0.2),
                       fake_ratios: Sequence[float] = (0.8, 0.2), seed: int = 0) -> SplitSet:
    """Train/validate on ``train_synths`` fakes; every other synthesizer is test-only."""
    _check_ratios(real_ratios)
    _check_ratios(fake_ratios)
    train_synths = set(train_synths)
    present = {e.synthesizer_id for e in entries} - {REAL}
    if not train_synths:
        raise ValueError("train_synths must be non-empty")
    if not train_synths <= present:
        raise ValueError(f"unknown synthesizers {sorted(train_synths - present)}")
    if train_synths == present:
        raise ValueError("train_synths covers every synthesizer; the test split would have no fakes")
    rng = random.Random(seed)
    reals = [e for e in entries if e.is_real]
    real_parts = _partition(sorted(reals, key=_entry_key), real_ratios, rng)
    seen_fakes = sorted((e for e in entries if e.synthesizer_id in train_synths), key=_entry_key)
    fake_train, fake_val = _partition(seen_fakes, fake_ratios, rng)
    unseen = [e for e in entries if not e.is_real and e.synthesizer_id not in train_synths]
    return SplitSet(
        _in_input_order(entries, real_parts[0] + fake_train),
        _in_input_order(entries, real_parts[1] + fake_val),
        _in_input_order(entries, real_parts[2]) + unseen,
    )


def split_train_val(entries: Sequence[ManifestEntry], ratios: Sequence[float] = (0.8, 0.2),
                    seed: int = 0, test: Sequence[ManifestEntry] = ()) -> SplitSet:
    """ID-grouped train/validation split for cross-dataset and cross-language runs."""
    _check_ratios(ratios)
    if len(ratios) != 2:
        raise ValueError("train/validation split needs two ratios")
    ids = _unique_ids(entries)
    if len(ids) < 2:
        raise ValueError("need at least 2 unique file_ids")
    groups = _partition(ids, ratios, random.Random(seed))
    train_ids = set(groups[0])
    return SplitSet(
        [e for e in entries if e.file_id in train_ids],
        [e for e in entries if e.file_id not in train_ids],
        list(test),
    )


def split_cross_language(entries: Sequence[ManifestEntry], source: str, target: str,
                         ratios: Sequence[float] = (0.8, 0.2), seed: int = 0,
                         restrict_synths: bool = True) -> SplitSet:
    """Train/validate on ``source`` language, test on every ``target`` clip.

    With ``restrict_synths``, source fakes are limited to synthesizers that
    also occur in the target language.
    """
    target_entries = [e for e in entries if e.language == target]
    source_entries = [e for e in entries if e.language == source]
    if not target_entries or not source_entries:
        raise ValueError(f"languages {source!r} and {target!r} must both be present")
    if restrict_synths:
        keep = {e.synthesizer_id for e in target_entries}
        source_entries = [e for e in source_entries if e.synthesizer_id in keep]
    return split_train_val(source_entries, ratios, seed, test=target_entries)


def _entry_key(e: ManifestEntry) -> tuple[str, str]:
    return (e.file_id, e.synthesizer_id)


def _in_input_order(entries: Sequence[ManifestEntry], chosen: Iterable[ManifestEntry]) -> list[ManifestEntry]:
    keys = {_entry_key(e) for e in chosen}
    return [e for e in entries if _entry_key(e) in keys]


def oversample_real(entries: Sequence[ManifestEntry], seed: int = 0) -> list[ManifestEntry]:
    """Repeat real entries until they match the fake count.

    Whole copies first, the remainder drawn without replacement; the result is
    shuffled with the same seed.
    """
    reals = [e for e in entries if e.is_real]
    fakes = [e for e in entries if not e.is_real]
    if not reals or not fakes:
        raise ValueError("oversampling needs at least one real and one fake entry")
    rng = random.Random(seed)
    out = list(entries)
    deficit = len(fakes) - len(reals)
    if deficit > 0:
        whole, rest = divmod(deficit, len(reals))
        out.extend(reals * whole)
        out.extend(rng.sample(reals, rest))
    rng.shuffle(out)
    return out
