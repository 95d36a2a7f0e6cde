"""Ranking metrics and the report record emitted by every evaluation.

ROC AUC uses the rank-sum (Mann-Whitney) formulation with ties counted as
half a concordant pair. PR AUC is average precision with step interpolation:
samples sharing a score enter the ranking together, and precision is taken
after each distinct-score group.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .util import canonical_json, sha256_hex


def _validate_inputs(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal 1-d arrays")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    return scores, labels.astype(bool)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given the mean rank of their group."""
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [scores.size]))
    group_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative, ties
    counted one half."""
    scores, labels = _validate_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = _average_ranks(scores)
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision over descending distinct-score thresholds."""
    scores, labels = _validate_inputs(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("pr_auc needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    ends = np.concatenate((np.flatnonzero(np.diff(sorted_scores)) + 1, [scores.size]))
    tp = np.cumsum(sorted_labels)[ends - 1].astype(np.float64)
    precision = tp / ends
    delta_tp = np.diff(np.concatenate(([0.0], tp)))
    return float(np.sum(delta_tp * precision) / n_pos)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class MetricsReport:
    roc_auc: float
    pr_auc: float
    sizes: dict[str, int]
    seed: int
    config_hash: str
    wall_clock_sec: float = 0.0
    tags: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "roc_auc": self.roc_auc,
            "pr_auc": self.pr_auc,
            "sizes": self.sizes,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "wall_clock_sec": self.wall_clock_sec,
            "tags": self.tags,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)

    def canonical_hash(self) -> str:
        """Content hash over everything except wall clock, so reruns with the
        same config and seed hash identically."""
        payload = self.to_dict()
        payload.pop("wall_clock_sec")
        return sha256_hex(canonical_json(payload))


def evaluate_scores(
    scores: np.ndarray,
    labels: np.ndarray,
    *,
    seed: int,
    config_hash: str,
    sizes: dict[str, int] | None = None,
    tags: dict[str, Any] | None = None,
    started: float | None = None,
) -> MetricsReport:
    labels = np.asarray(labels)
    report = MetricsReport(
        roc_auc=roc_auc(scores, labels),
        pr_auc=pr_auc(scores, labels),
        sizes=dict(sizes or {"test": int(labels.size)}),
        seed=seed,
        config_hash=config_hash,
        wall_clock_sec=0.0 if started is None else time.perf_counter() - started,
        tags=dict(tags or {}),
    )
    return report


@dataclass
class SweepResult:
    """Reports along one swept axis; axis values are unique and sorted."""

    axis: str
    cells: list[tuple[Any, MetricsReport]]

    def __post_init__(self) -> None:
        values = [v for v, _ in self.cells]
        if len(set(map(str, values))) != len(values):
            raise ValueError(f"duplicate axis values in sweep: {values}")
        self.cells = sorted(self.cells, key=lambda cell: (isinstance(cell[0], str), cell[0]))

    @property
    def values(self) -> list[Any]:
        return [v for v, _ in self.cells]

    def report_for(self, value: Any) -> MetricsReport:
        for v, report in self.cells:
            if v == value:
                return report
        raise KeyError(f"no cell for axis value {value!r}")
