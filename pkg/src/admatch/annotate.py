"""Annotator training and dataset scoring.

Auxiliary binary tasks are carved out of the graded label sets by sliding the
negative pivot: the main task treats only grade 0 as negative, and each
auxiliary task extends the negative prefix by one grade. Annotators are
trained on labeled data (the crossing model via the multi-task loss, the tree
ensemble on the main task alone) and then score labeled and unlabeled
datasets; with several annotators the score is their arithmetic mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import AdListing, GradedLabel, LabeledSample, UnlabeledPair, _COLUMNS
from .errors import ConfigError, DataFormatError
from .featurize import EncodedDataset
from .gbdt import GbdtConfig, GbdtModel, train_gbdt
from .metrics import roc_auc
from .models import DeepCrossingConfig, DeepCrossingModel, TaskSet
from .training import TrainingHistory, TrainParams, fit
from .util import derive_seed

_GRADE_MAX = {"ac": 4, "lp": 5}


@dataclass(frozen=True)
class TaskBinarization:
    label_set: str
    negative_labels: frozenset[int]

    def __post_init__(self) -> None:
        if self.label_set not in _GRADE_MAX:
            raise ConfigError(f"unknown label set {self.label_set!r}")
        negatives = sorted(self.negative_labels)
        if negatives != list(range(len(negatives))):
            raise ConfigError(f"negative labels must form a prefix {{0..k}}, got {negatives}")
        if not negatives or negatives[-1] >= _GRADE_MAX[self.label_set]:
            raise ConfigError(f"negative set {negatives} must be a strict, non-empty prefix")


MAIN_TASK_AC = TaskBinarization("ac", frozenset({0}))
MAIN_TASK_LP = TaskBinarization("lp", frozenset({0}))


def binarize(value: int, task: TaskBinarization) -> int:
    if not (0 <= value <= _GRADE_MAX[task.label_set]):
        raise ConfigError(
            f"grade {value} outside the {task.label_set} range [0, {_GRADE_MAX[task.label_set]}]"
        )
    return 0 if value in task.negative_labels else 1


def binarize_array(values: np.ndarray, task: TaskBinarization) -> np.ndarray:
    values = np.asarray(values)
    if values.size and (values.min() < 0 or values.max() > _GRADE_MAX[task.label_set]):
        raise ConfigError(f"grades outside the {task.label_set} range")
    negatives = np.array(sorted(task.negative_labels))
    return (~np.isin(values, negatives)).astype(np.int64)


@dataclass(frozen=True)
class ScoredSample:
    query: str
    listing: AdListing
    s: float
    label: GradedLabel | None = None
    ytilde: int | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.s) or not (0.0 <= self.s <= 1.0):
            raise ValueError(f"annotator score must be finite in [0,1], got {self.s!r}")
        if (self.label is None) != (self.ytilde is None):
            raise ValueError("ytilde must be present exactly when the graded label is")


@dataclass
class ScoredDataset:
    """Encoded dataset plus annotator scores, and the binary main-task label
    for labeled data."""

    enc: EncodedDataset
    s: np.ndarray
    ytilde: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Annotators


class DcAnnotator:
    kind = "dc"

    def __init__(self, model: DeepCrossingModel, history: TrainingHistory | None = None):
        self.model = model
        self.history = history

    def score(self, enc: EncodedDataset) -> np.ndarray:
        return self.model.score(enc.fields)


class GbdtAnnotator:
    kind = "gbdt"

    def __init__(self, model: GbdtModel):
        self.model = model

    def score(self, enc: EncodedDataset) -> np.ndarray:
        return self.model.predict(enc.lexical)


def _require_both_classes(ac: np.ndarray, where: str) -> np.ndarray:
    ytilde = binarize_array(ac, MAIN_TASK_AC)
    if len(np.unique(ytilde)) < 2:
        raise ConfigError(f"{where}: main task needs both classes present")
    return ytilde


def train_deep_crossing_annotator(
    train: EncodedDataset,
    val: EncodedDataset,
    task_set: TaskSet,
    config: DeepCrossingConfig,
    train_params: TrainParams,
    seed: int,
) -> DcAnnotator:
    """MTL training with early stopping on validation main-task ROC AUC."""
    if train.ac is None or train.lp is None:
        raise ConfigError("deep crossing annotator needs graded labels")
    _require_both_classes(train.ac, "annotator training set")
    labels = task_set.label_matrix(train.ac, train.lp)
    val_ytilde = _require_both_classes(val.ac, "annotator validation set")

    vocab_size = train.fields.fields["query"].shape[1]
    model = DeepCrossingModel(vocab_size, task_set, config, seed=derive_seed(seed, "dc-init"))

    def batch_loss(idx: np.ndarray):
        model.train_mode(True)
        heads, _ = model.forward(train.fields.take(idx))
        return model.mtl_loss(heads, labels[idx])

    def val_auc() -> float:
        return roc_auc(model.score(val.fields), val_ytilde)

    history = fit(
        model.param_tensors(),
        train.n,
        batch_loss,
        val_auc,
        train_params,
        seed=derive_seed(seed, "dc-fit"),
    )
    model.train_mode(False)
    return DcAnnotator(model, history)


def train_gbdt_annotator(
    train: EncodedDataset,
    config: GbdtConfig,
    seed: int,
) -> GbdtAnnotator:
    """Tree-ensemble annotator on the main-task binary label."""
    if train.ac is None:
        raise ConfigError("gbdt annotator needs graded labels")
    ytilde = _require_both_classes(train.ac, "annotator training set")
    model = train_gbdt(train.lexical, ytilde.astype(np.float64), config, seed=seed)
    return GbdtAnnotator(model)


def score_encoded(annotators: Sequence[DcAnnotator | GbdtAnnotator], enc: EncodedDataset) -> np.ndarray:
    """Arithmetic mean of the annotators' composite scores."""
    if not annotators:
        raise ConfigError("need at least one annotator to score")
    total = np.zeros(enc.n)
    for annotator in annotators:
        total += annotator.score(enc)
    return total / len(annotators)


def make_scored(annotators: Sequence[DcAnnotator | GbdtAnnotator], enc: EncodedDataset) -> ScoredDataset:
    s = score_encoded(annotators, enc)
    ytilde = None if enc.ac is None else binarize_array(enc.ac, MAIN_TASK_AC)
    return ScoredDataset(enc=enc, s=s, ytilde=ytilde)


def score_dataset(
    annotators: Sequence[DcAnnotator | GbdtAnnotator],
    samples: Sequence[LabeledSample | UnlabeledPair],
    enc: EncodedDataset,
) -> list[ScoredSample]:
    """Order-preserving scored view of a dataset, with the binary main-task
    label attached to labeled samples."""
    s = score_encoded(annotators, enc)
    out: list[ScoredSample] = []
    for i, sample in enumerate(samples):
        if isinstance(sample, LabeledSample):
            out.append(
                ScoredSample(
                    query=sample.query,
                    listing=sample.listing,
                    s=float(s[i]),
                    label=sample.label,
                    ytilde=binarize(sample.label.ac, MAIN_TASK_AC),
                )
            )
        else:
            out.append(ScoredSample(query=sample.query, listing=sample.listing, s=float(s[i])))
    return out


# ---------------------------------------------------------------------------
# Scored TSV persistence: input columns plus s (and ytilde when labeled).


def save_scored(path: str | Path, scored: Sequence[ScoredSample], kind: str) -> None:
    if kind not in ("labeled", "unlabeled"):
        raise ConfigError(f"scored datasets are labeled or unlabeled, got {kind!r}")
    columns = list(_COLUMNS[kind]) + (["s", "ytilde"] if kind == "labeled" else ["s"])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(columns) + "\n")
        for sample in scored:
            listing = sample.listing
            row = [sample.query, listing.keyword, listing.ad_title, listing.lp_title]
            if kind == "labeled":
                if sample.label is None:
                    raise DataFormatError("labeled scored rows need graded labels")
                row += [str(sample.label.ac), str(sample.label.lp), repr(sample.s), str(sample.ytilde)]
            else:
                row.append(repr(sample.s))
            fh.write("\t".join(row) + "\n")


def load_scored(path: str | Path, kind: str) -> list[ScoredSample]:
    if kind not in ("labeled", "unlabeled"):
        raise ConfigError(f"scored datasets are labeled or unlabeled, got {kind!r}")
    columns = list(_COLUMNS[kind]) + (["s", "ytilde"] if kind == "labeled" else ["s"])
    path = Path(path)
    out: list[ScoredSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != columns:
            raise DataFormatError(f"{path}: header {header!r} does not match scored {kind} schema")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(columns):
                raise DataFormatError(f"{path}:{lineno}: expected {len(columns)} columns")
            listing = AdListing(keyword=parts[1], ad_title=parts[2], lp_title=parts[3])
            try:
                if kind == "labeled":
                    label = GradedLabel(ac=int(parts[4]), lp=int(parts[5]))
                    label.validate()
                    out.append(
                        ScoredSample(parts[0], listing, float(parts[6]), label, int(parts[7]))
                    )
                else:
                    out.append(ScoredSample(parts[0], listing, float(parts[4])))
            except (ValueError, DataFormatError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    return out
