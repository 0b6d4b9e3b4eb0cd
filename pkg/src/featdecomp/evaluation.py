"""AUC / EER and protocol reports.

Scores are P(real) from the final sigmoid head; label 1 means genuine speech,
which is the positive class for both metrics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .manifest import ManifestEntry, REAL

PROTOCOLS = ("inner", "cross_method", "cross_dataset", "cross_language")


class MetricError(ValueError):
    pass


def _prepare(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    if not set(np.unique(labels)) <= {0, 1}:
        raise MetricError("labels must be 0/1")
    if labels.sum() == 0 or labels.sum() == labels.size:
        raise MetricError("both classes are required")
    return scores, labels


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    # start index of each run of equal values
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    run_rank = (starts + ends + 1) / 2.0  # 1-based average rank
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive outscores negative), ties count 1/2."""
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = _average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC vertices from (0, 0) to (1, 1); tied scores form one vertex.

    Returns ``(fpr, tpr, thresholds)`` where vertex ``k`` accepts scores
    ``>= thresholds[k]`` as positive (``inf`` for the origin).
    """
    scores, labels = _prepare(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    last_of_run = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(l)[last_of_run]
    fp = np.cumsum(1 - l)[last_of_run]
    fpr = np.r_[0.0, fp / fp[-1]]
    tpr = np.r_[0.0, tp / tp[-1]]
    return fpr, tpr, np.r_[np.inf, s[last_of_run]]


def compute_eer(scores, labels) -> float:
    """Rate where FPR equals FNR, linearly interpolated along the ROC."""
    fpr, tpr, _ = roc_curve(scores, labels)
    gap = (1.0 - tpr) - fpr  # non-increasing from 1 to -1
    k = int(np.flatnonzero(gap <= 0)[0])
    if gap[k] == 0 or k == 0:
        return float(fpr[k])
    frac = gap[k - 1] / (gap[k - 1] - gap[k])
    return float(fpr[k - 1] + frac * (fpr[k] - fpr[k - 1]))


@dataclass
class ScoreSet:
    file_ids: list[str]
    scores: np.ndarray
    labels: np.ndarray
    synthesizer_ids: list[str]
    languages: list[str]
    datasets: list[str]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.file_ids)
        if not (self.scores.size == self.labels.size == len(self.synthesizer_ids) == n):
            raise MetricError("ScoreSet fields differ in length")

    @classmethod
    def from_entries(cls, entries: Sequence[ManifestEntry], scores) -> "ScoreSet":
        return cls([e.file_id for e in entries], scores, [e.label for e in entries],
                   [e.synthesizer_id for e in entries], [e.language for e in entries],
                   [e.dataset for e in entries])

    def subset(self, mask) -> "ScoreSet":
        mask = np.asarray(mask, dtype=bool)
        pick = lambda xs: [x for x, m in zip(xs, mask) if m]
        return ScoreSet(pick(self.file_ids), self.scores[mask], self.labels[mask],
                        pick(self.synthesizer_ids), pick(self.languages), pick(self.datasets))


@dataclass
class GroupResult:
    name: str
    auc: float
    eer: float
    n_real: int
    n_fake: int


@dataclass
class ProtocolReport:
    protocol: str
    groups: list[GroupResult] = field(default_factory=list)
    label: str = ""

    @property
    def average_auc(self) -> float:
        return float(np.mean([g.auc for g in self.groups]))

    @property
    def average_eer(self) -> float:
        return float(np.mean([g.eer for g in self.groups]))

    def to_record(self) -> dict:
        return {
            "protocol": self.protocol,
            "label": self.label,
            "groups": [vars(g) for g in self.groups],
            "average": {"auc": self.average_auc, "eer": self.average_eer},
        }


def group_masks(scores: ScoreSet, protocol: str) -> dict[str, np.ndarray]:
    """Which rows enter each reported group.

    ``inner``: one group per dataset tag (``all`` when untagged).
    ``cross_method`` / ``cross_dataset``: one group per fake synthesizer, each
    holding that synthesizer's fakes plus every real clip.
    ``cross_language``: one group per language.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    real = scores.labels == 1
    if protocol == "inner":
        tags = [d or "all" for d in scores.datasets]
        return {t: np.array([x == t for x in tags]) for t in sorted(set(tags))}
    if protocol == "cross_language":
        return {lang: np.array([x == lang for x in scores.languages])
                for lang in sorted(set(scores.languages))}
    synths = sorted(set(scores.synthesizer_ids) - {REAL})
    return {s: real | np.array([x == s for x in scores.synthesizer_ids]) for s in synths}


def report_from_scores(scores: ScoreSet, protocol: str, label: str = "") -> ProtocolReport:
    report = ProtocolReport(protocol, label=label)
    for name, mask in group_masks(scores, protocol).items():
        part = scores.subset(mask)
        n_real = int(part.labels.sum())
        if n_real == 0 or n_real == part.labels.size:
            raise MetricError(f"group {name!r} has a single class")
        report.groups.append(GroupResult(name, compute_auc(part.scores, part.labels),
                                         compute_eer(part.scores, part.labels),
                                         n_real, int(part.labels.size - n_real)))
    return report


def run_protocol(score_fn: Callable[[Sequence[ManifestEntry]], np.ndarray],
                 test_entries: Sequence[ManifestEntry], protocol: str,
                 label: str = "") -> tuple[ProtocolReport, ScoreSet]:
    """Score ``test_entries`` with ``score_fn`` and build the grouped report.

    ``score_fn`` maps entries to P(real) scores with eval preprocessing; see
    :func:`featdecomp.training.make_scorer`.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if not test_entries:
        raise MetricError("no test entries")
    scores = ScoreSet.from_entries(test_entries, score_fn(test_entries))
    return report_from_scores(scores, protocol, label), scores


# --- score dumps and tables ---------------------------------------------------

def write_score_dump(path: str | Path, scores: ScoreSet, protocol: str) -> None:
    """One JSON line per (clip, group) membership: file_id, group, score, label."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for group, mask in group_masks(scores, protocol).items():
            for i in np.flatnonzero(mask):
                rec = {"file_id": scores.file_ids[i], "group": group,
                       "score": float(scores.scores[i]), "label": int(scores.labels[i]),
                       "synthesizer_id": scores.synthesizer_ids[i]}
                fh.write(json.dumps(rec) + "\n")


def read_score_dump(path: str | Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    groups: dict[str, tuple[list, list]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                g = groups.setdefault(str(rec["group"]), ([], []))
                g[0].append(float(rec["score"]))
                g[1].append(int(rec["label"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad score record: {exc}") from None
    return {k: (np.array(v[0]), np.array(v[1])) for k, v in groups.items()}


def report_from_dump(path: str | Path, protocol: str = "dump", label: str = "") -> ProtocolReport:
    report = ProtocolReport(protocol, label=label or Path(path).stem)
    for name in sorted(groups := read_score_dump(path)):
        s, l = groups[name]
        report.groups.append(GroupResult(name, compute_auc(s, l), compute_eer(s, l),
                                         int(l.sum()), int(l.size - l.sum())))
    return report


def format_table(reports: Iterable[ProtocolReport]) -> str:
    """Aligned text table: one row per report, ``AUC/EER`` in percent per group."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to format")
    names = [g.name for g in reports[0].groups]
    for r in reports[1:]:
        if [g.name for g in r.groups] != names:
            raise ValueError(f"incompatible group schemas: {names} vs {[g.name for g in r.groups]}")
    header = ["Method"] + names + ["Average"]
    rows = []
    for r in reports:
        cells = [f"{100 * g.auc:.2f}/{100 * g.eer:.2f}" for g in r.groups]
        rows.append([r.label or r.protocol] + cells + [f"{100 * r.average_auc:.2f}/{100 * r.average_eer:.2f}"])
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    fmt = lambda row: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                                for i, (c, w) in enumerate(zip(row, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"
