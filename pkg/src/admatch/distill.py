"""Student training on annotator scores and label-aware fine-tuning.

Annotator scores s are turned into training targets and sample weights by
small mapping functions:

    hard target     f1(s) = 1 if s >= 0.5 else 0   (trained with cross-entropy)
    soft target     f2(s) = s                      (trained with weighted MSE)
    band weight     g1(s) = 0 if t1 < s < t2 else 1
    margin weight   g2(s) = |2s - 1|^p
    constant        g3(s) = 1

Fine-tuning re-weights the squared error per sample by how acceptable the
deviation is given the binary human label: with discount theta in [0, 1],

    delta_theta(x) = theta if x <= 0 else 1
    w~ = delta_theta(y - yhat)^ytilde * (theta + 1 - delta_theta(y - yhat))^(1 - ytilde)

so an overprediction on a positive (or underprediction on a negative) is an
acceptable error and costs only theta times the usual weight. The weight is
treated as a constant in backpropagation; gradients flow through the squared
error alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import ScoredDataset, binarize_array, MAIN_TASK_AC
from .errors import ConfigError
from .featurize import EncodedDataset
from .metrics import roc_auc
from .models import CdssmConfig, CdssmModel
from .nn import autodiff as ad
from .training import TrainingHistory, TrainParams, fit
from .util import derive_seed

TARGET_FNS = ("f1", "f2")
WEIGHT_FNS = ("g1", "g2", "g3")
FINETUNE_MODES = ("hard-baseline", "soft-baseline", "label-aware")


@dataclass(frozen=True)
class MappingConfig:
    target_fn: str = "f2"
    weight_fn: str = "g3"
    t1: float = 0.4
    t2: float = 0.6
    p: float = 2.0

    def __post_init__(self) -> None:
        if self.target_fn not in TARGET_FNS:
            raise ConfigError(f"target_fn must be one of {TARGET_FNS}, got {self.target_fn!r}")
        if self.weight_fn not in WEIGHT_FNS:
            raise ConfigError(f"weight_fn must be one of {WEIGHT_FNS}, got {self.weight_fn!r}")
        if not (0.0 <= self.t1 < self.t2 <= 1.0):
            raise ConfigError(f"need 0 <= t1 < t2 <= 1, got t1={self.t1!r} t2={self.t2!r}")
        if self.p <= 0:
            raise ConfigError(f"exponent p must be positive, got {self.p!r}")

    @property
    def name(self) -> str:
        return f"{self.target_fn}:{self.weight_fn}"

    @classmethod
    def parse(cls, text: str, t1: float = 0.4, t2: float = 0.6, p: float = 2.0) -> "MappingConfig":
        parts = text.split(":")
        if len(parts) != 2:
            raise ConfigError(f"mapping must look like 'f2:g3', got {text!r}")
        return cls(target_fn=parts[0], weight_fn=parts[1], t1=t1, t2=t2, p=p)

    def to_dict(self) -> dict:
        return {
            "target_fn": self.target_fn,
            "weight_fn": self.weight_fn,
            "t1": self.t1,
            "t2": self.t2,
            "p": self.p,
        }


def _check_scores(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.size and (not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0):
        raise ConfigError("annotator scores must lie in [0, 1]")
    return s


def map_target(s: np.ndarray | float, config: MappingConfig) -> np.ndarray | float:
    scalar = np.isscalar(s)
    s = _check_scores(np.atleast_1d(s))
    if config.target_fn == "f1":
        y = (s >= 0.5).astype(np.float64)
    else:
        y = s.copy()
    return float(y[0]) if scalar else y


def map_weight(s: np.ndarray | float, config: MappingConfig) -> np.ndarray | float:
    scalar = np.isscalar(s)
    s = _check_scores(np.atleast_1d(s))
    if config.weight_fn == "g1":
        w = np.where((s > config.t1) & (s < config.t2), 0.0, 1.0)
    elif config.weight_fn == "g2":
        w = np.abs(2.0 * s - 1.0) ** config.p
    else:
        w = np.ones_like(s)
    return float(w[0]) if scalar else w


def label_aware_weight(
    y: np.ndarray | float,
    y_hat: np.ndarray | float,
    y_tilde: np.ndarray | float,
    theta: float,
) -> np.ndarray | float:
    """The fine-tuning weight; always equal to theta or 1 exactly."""
    if not (0.0 <= theta <= 1.0):
        raise ConfigError(f"theta must lie in [0, 1], got {theta!r}")
    scalar = np.isscalar(y) and np.isscalar(y_hat) and np.isscalar(y_tilde)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=np.float64))
    y_tilde = np.atleast_1d(np.asarray(y_tilde, dtype=np.float64))
    delta = np.where(y - y_hat <= 0.0, theta, 1.0)
    w = delta**y_tilde * (theta + 1.0 - delta) ** (1.0 - y_tilde)
    return float(w[0]) if scalar else w


@dataclass(frozen=True)
class FinetuneConfig:
    mode: str = "label-aware"
    theta: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in FINETUNE_MODES:
            raise ConfigError(f"mode must be one of {FINETUNE_MODES}, got {self.mode!r}")
        if not (0.0 <= self.theta <= 1.0):
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta!r}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "theta": self.theta}


# ---------------------------------------------------------------------------
# Student training on scored unlabeled data (step 3).


def _split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(np.floor(fraction * n))) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_student(
    scored: ScoredDataset,
    mapping: MappingConfig,
    config: CdssmConfig,
    train_params: TrainParams,
    seed: int,
) -> tuple[CdssmModel, TrainingHistory]:
    """Train a fresh dual encoder against mapped targets and weights.

    Hard targets train with weighted cross-entropy, soft targets with the
    weighted squared error; zero-weight samples contribute no gradient. The
    best checkpoint by held-out weighted loss is returned.
    """
    s = _check_scores(scored.s)
    y = map_target(s, mapping)
    w = map_weight(s, mapping)
    if not np.any(w > 0.0):
        raise ConfigError("no effective training signal: every sample weight is zero")

    enc = scored.enc
    train_idx, val_idx = _split_indices(enc.n, train_params.val_fraction, derive_seed(seed, "student-val"))
    vocab_size = enc.query_seq.word_rows.shape[1]
    model = CdssmModel(vocab_size, config, seed=derive_seed(seed, "student-init"))

    def batch_loss(idx: np.ndarray):
        rows = train_idx[idx]
        pred = model.score_pairs(enc.query_seq.take(rows), enc.ad_seq.take(rows))
        if mapping.target_fn == "f1":
            return ad.cross_entropy(pred, y[rows], w[rows])
        return ad.weighted_mse(pred, y[rows], w[rows])

    def val_metric() -> float:
        if val_idx.size == 0:
            return 0.0
        pred = model.score(enc.query_seq.take(val_idx), enc.ad_seq.take(val_idx))
        diff = y[val_idx] - pred
        if mapping.target_fn == "f1":
            pc = np.clip(pred, 1e-7, 1.0 - 1e-7)
            losses = -(y[val_idx] * np.log(pc) + (1 - y[val_idx]) * np.log(1 - pc))
            return -float(np.mean(w[val_idx] * losses))
        return -float(np.mean(w[val_idx] * diff * diff))

    history = fit(
        model.param_tensors(),
        train_idx.size,
        batch_loss,
        val_metric,
        train_params,
        seed=derive_seed(seed, "student-fit"),
    )
    return model, history


# ---------------------------------------------------------------------------
# Fine-tuning on scored labeled data (step 4).


def finetune(
    student: CdssmModel,
    scored_labeled: ScoredDataset,
    val: EncodedDataset,
    config: FinetuneConfig,
    train_params: TrainParams,
    seed: int,
    mapping: MappingConfig = MappingConfig(),
) -> tuple[CdssmModel, TrainingHistory]:
    """Fine-tune a copy of the student on scored labeled data.

    Modes: hard-baseline learns the binary label with cross-entropy,
    soft-baseline learns the mapped target with MSE, and label-aware applies
    the theta-discounted weight to the squared error. Validation is main-task
    ROC AUC on the held-out labeled set.
    """
    enc = scored_labeled.enc
    s = _check_scores(scored_labeled.s)
    y = map_target(s, mapping)
    if config.mode in ("hard-baseline", "label-aware"):
        if scored_labeled.ytilde is None:
            raise ConfigError(f"{config.mode} fine-tuning needs binary labels on every sample")
    ytilde = scored_labeled.ytilde
    val_labels = binarize_array(val.ac, MAIN_TASK_AC)

    model = student.clone()

    def batch_loss(idx: np.ndarray):
        pred = model.score_pairs(enc.query_seq.take(idx), enc.ad_seq.take(idx))
        if config.mode == "hard-baseline":
            return ad.cross_entropy(pred, ytilde[idx].astype(np.float64))
        if config.mode == "soft-baseline":
            return ad.weighted_mse(pred, y[idx])
        weights = label_aware_weight(y[idx], pred.data, ytilde[idx], config.theta)
        return ad.weighted_mse(pred, y[idx], weights)

    def val_auc() -> float:
        return roc_auc(model.score(val.query_seq, val.ad_seq), val_labels)

    history = fit(
        model.param_tensors(),
        enc.n,
        batch_loss,
        val_auc,
        train_params,
        seed=derive_seed(seed, "finetune-fit"),
    )
    return model, history


# ---------------------------------------------------------------------------
# Direct-supervision baselines for the protocol comparisons.


def train_cdssm_on_labels(
    train: EncodedDataset,
    val: EncodedDataset,
    config: CdssmConfig,
    train_params: TrainParams,
    seed: int,
) -> tuple[CdssmModel, TrainingHistory]:
    """The labeled baseline: cross-entropy on the binary main-task label."""
    targets = binarize_array(train.ac, MAIN_TASK_AC).astype(np.float64)
    val_labels = binarize_array(val.ac, MAIN_TASK_AC)
    vocab_size = train.query_seq.word_rows.shape[1]
    model = CdssmModel(vocab_size, config, seed=derive_seed(seed, "labeled-init"))

    def batch_loss(idx: np.ndarray):
        pred = model.score_pairs(train.query_seq.take(idx), train.ad_seq.take(idx))
        return ad.cross_entropy(pred, targets[idx])

    def val_auc() -> float:
        return roc_auc(model.score(val.query_seq, val.ad_seq), val_labels)

    history = fit(
        model.param_tensors(),
        train.n,
        batch_loss,
        val_auc,
        train_params,
        seed=derive_seed(seed, "labeled-fit"),
    )
    return model, history


def train_cdssm_on_clicks(
    clicked: EncodedDataset,
    val: EncodedDataset,
    config: CdssmConfig,
    train_params: TrainParams,
    seed: int,
) -> tuple[CdssmModel, TrainingHistory]:
    """The click baseline: clicked pairs are positives, and each batch is
    doubled with synthetic negatives pairing the queries against ads randomly
    drawn from the same batch."""
    val_labels = binarize_array(val.ac, MAIN_TASK_AC)
    vocab_size = clicked.query_seq.word_rows.shape[1]
    model = CdssmModel(vocab_size, config, seed=derive_seed(seed, "click-init"))
    negative_rng = np.random.default_rng(derive_seed(seed, "click-negatives"))

    def batch_loss(idx: np.ndarray):
        if idx.size > 1:
            shift = int(negative_rng.integers(1, idx.size))
            neg_ads = np.roll(idx, shift)
        else:
            neg_ads = idx
        q_rows = np.concatenate([idx, idx])
        a_rows = np.concatenate([idx, neg_ads])
        targets = np.concatenate([np.ones(idx.size), np.zeros(idx.size)])
        pred = model.score_pairs(clicked.query_seq.take(q_rows), clicked.ad_seq.take(a_rows))
        return ad.cross_entropy(pred, targets)

    def val_auc() -> float:
        return roc_auc(model.score(val.query_seq, val.ad_seq), val_labels)

    history = fit(
        model.param_tensors(),
        clicked.n,
        batch_loss,
        val_auc,
        train_params,
        seed=derive_seed(seed, "click-fit"),
    )
    return model, history
