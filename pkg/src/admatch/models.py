"""The deployable dual encoder and the multi-task crossing annotator.

CdssmModel encodes query and ad independently into unit vectors whose cosine
(mapped to [0,1]) is the matching score; that separability is what allows a
precomputed ad-vector dictionary at serving time.

DeepCrossingModel embeds the four text fields, mixes them through residual
units, and scores one sigmoid head per binary task; the composite score and
the multi-task loss both weight the heads by the task weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .featurize import FIELD_NAMES, FieldBatch, SequenceBatch
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.checkpoint import Checkpoint
from .nn.layers import Dense, EmbeddingSum, ResidualUnit, WordConv, WordMaxPool
from .util import rng_for

AC_RANGE = range(0, 5)
LP_RANGE = range(0, 6)


# ---------------------------------------------------------------------------
# Task sets


@dataclass(frozen=True)
class TaskSpec:
    name: str
    label_set: str  # "ac" | "lp"
    negative_labels: frozenset[int]
    weight: float
    is_main: bool

    def binarize(self, values: np.ndarray) -> np.ndarray:
        negatives = np.array(sorted(self.negative_labels))
        return (~np.isin(values, negatives)).astype(np.float64)


def _aux_tasks(label_set: str, max_grade: int) -> list[tuple[str, frozenset[int]]]:
    out = []
    for k in range(1, max_grade):
        out.append((f"{label_set}-aux{k}", frozenset(range(0, k + 1))))
    return out


class TaskSet:
    """Main and auxiliary binary tasks with their loss/score weights.

    The main tasks take half of the total weight whenever auxiliary tasks are
    present (all of it otherwise), and auxiliary tasks share the remainder
    evenly.
    """

    def __init__(self, tasks: Sequence[TaskSpec]):
        self.tasks = tuple(tasks)
        self._validate()

    def _validate(self) -> None:
        if not self.tasks:
            raise ConfigError("task set must contain at least one task")
        total = sum(t.weight for t in self.tasks)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"task weights must sum to 1, got {total!r}")
        mains = [t for t in self.tasks if t.is_main]
        auxes = [t for t in self.tasks if not t.is_main]
        for label_set in {t.label_set for t in self.tasks}:
            n_main = sum(1 for t in mains if t.label_set == label_set)
            if n_main != 1:
                raise ConfigError(f"label set {label_set!r} needs exactly one main task, got {n_main}")
        main_total = sum(t.weight for t in mains)
        expected_main = 0.5 if auxes else 1.0
        if abs(main_total - expected_main) > 1e-9:
            raise ConfigError(
                f"main tasks must carry weight {expected_main}, got {main_total!r}"
            )
        if auxes:
            w0 = auxes[0].weight
            if any(abs(t.weight - w0) > 1e-9 for t in auxes):
                raise ConfigError("auxiliary tasks must be evenly weighted")
        for t in self.tasks:
            grades = AC_RANGE if t.label_set == "ac" else LP_RANGE
            negatives = sorted(t.negative_labels)
            if negatives != list(range(0, len(negatives))):
                raise ConfigError(f"task {t.name}: negatives must be a prefix {{0..k}}, got {negatives}")
            if len(negatives) >= len(grades):
                raise ConfigError(f"task {t.name}: negative set covers the whole label range")

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tasks]

    @property
    def weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.tasks])

    def label_matrix(self, ac: np.ndarray, lp: np.ndarray) -> np.ndarray:
        """Per-task binary labels, shape [n, n_tasks]."""
        columns = []
        for t in self.tasks:
            values = ac if t.label_set == "ac" else lp
            columns.append(t.binarize(values))
        return np.stack(columns, axis=1)

    def to_dict(self) -> dict:
        return {
            "tasks": [
                {
                    "name": t.name,
                    "label_set": t.label_set,
                    "negative_labels": sorted(t.negative_labels),
                    "weight": t.weight,
                    "is_main": t.is_main,
                }
                for t in self.tasks
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSet":
        return cls(
            [
                TaskSpec(
                    name=t["name"],
                    label_set=t["label_set"],
                    negative_labels=frozenset(t["negative_labels"]),
                    weight=t["weight"],
                    is_main=t["is_main"],
                )
                for t in data["tasks"]
            ]
        )

    @classmethod
    def joint(cls) -> "TaskSet":
        """Both label sets: two main tasks at 0.25 each, seven aux tasks."""
        aux = _aux_tasks("ac", 4) + _aux_tasks("lp", 5)
        w_aux = 0.5 / len(aux)
        tasks = [
            TaskSpec("ac-main", "ac", frozenset({0}), 0.25, True),
            TaskSpec("lp-main", "lp", frozenset({0}), 0.25, True),
        ]
        tasks += [TaskSpec(name, name[:2], negs, w_aux, False) for name, negs in aux]
        return cls(tasks)

    @classmethod
    def single(cls, label_set: str = "ac") -> "TaskSet":
        """The main task alone; the no-MTL ablation."""
        return cls([TaskSpec(f"{label_set}-main", label_set, frozenset({0}), 1.0, True)])

    @classmethod
    def with_aux(cls, label_set: str = "ac") -> "TaskSet":
        """One label set with its auxiliary tasks."""
        aux = _aux_tasks(label_set, 4 if label_set == "ac" else 5)
        w_aux = 0.5 / len(aux)
        tasks = [TaskSpec(f"{label_set}-main", label_set, frozenset({0}), 0.5, True)]
        tasks += [TaskSpec(name, label_set, negs, w_aux, False) for name, negs in aux]
        return cls(tasks)


# ---------------------------------------------------------------------------
# CDSSM dual encoder


@dataclass(frozen=True)
class CdssmConfig:
    conv_dim: int = 128
    semantic_dim: int = 64

    def to_dict(self) -> dict:
        return {"conv_dim": self.conv_dim, "semantic_dim": self.semantic_dim}


class _Tower:
    def __init__(self, vocab_size: int, config: CdssmConfig, rng: np.random.Generator):
        self.conv = WordConv(vocab_size, config.conv_dim, rng)
        self.pool = WordMaxPool()
        self.semantic = Dense(config.conv_dim, config.semantic_dim, rng)

    def encode(self, seq: SequenceBatch) -> Tensor:
        h = ad.tanh(self.conv(seq))
        pooled = self.pool(h, seq.mask)
        z = ad.tanh(self.semantic(pooled))
        return ad.l2_normalize(z)

    def params(self):
        out = [("conv." + n, p) for n, p in self.conv.params()]
        out += [("semantic." + n, p) for n, p in self.semantic.params()]
        return out


class CdssmModel:
    kind = "cdssm"

    def __init__(self, vocab_size: int, config: CdssmConfig = CdssmConfig(), seed: int = 0):
        self.vocab_size = vocab_size
        self.config = config
        self.seed = seed
        self.query_tower = _Tower(vocab_size, config, rng_for(seed, "cdssm", "query"))
        self.ad_tower = _Tower(vocab_size, config, rng_for(seed, "cdssm", "ad"))

    def encode(self, side: str, seq: SequenceBatch) -> Tensor:
        if side == "query":
            return self.query_tower.encode(seq)
        if side == "ad":
            return self.ad_tower.encode(seq)
        raise ConfigError(f"unknown tower side {side!r}")

    def score_pairs(self, query_seq: SequenceBatch, ad_seq: SequenceBatch) -> Tensor:
        q = self.encode("query", query_seq)
        a = self.encode("ad", ad_seq)
        cosine = ad.rowwise_dot(q, a)
        return ad.mul(ad.add(cosine, 1.0), 0.5)

    def score(self, query_seq: SequenceBatch, ad_seq: SequenceBatch, batch_size: int = 4096) -> np.ndarray:
        """Pairwise scores with a frozen model (no graph recorded)."""
        n = query_seq.n
        out = np.empty(n)
        with ad.no_grad():
            for start in range(0, n, batch_size):
                idx = np.arange(start, min(start + batch_size, n))
                out[idx] = self.score_pairs(query_seq.take(idx), ad_seq.take(idx)).data
        return out

    def encode_array(self, side: str, seq: SequenceBatch, batch_size: int = 4096) -> np.ndarray:
        """Unit vectors as a plain [n, dim] array (frozen model)."""
        vectors = np.empty((seq.n, self.config.semantic_dim))
        with ad.no_grad():
            for start in range(0, seq.n, batch_size):
                idx = np.arange(start, min(start + batch_size, seq.n))
                vectors[idx] = self.encode(side, seq.take(idx)).data
        return vectors

    def params(self):
        out = [("query_tower." + n, p) for n, p in self.query_tower.params()]
        out += [("ad_tower." + n, p) for n, p in self.ad_tower.params()]
        return out

    def param_tensors(self) -> list[Tensor]:
        return [p for _, p in self.params()]

    def clone(self) -> "CdssmModel":
        other = CdssmModel(self.vocab_size, self.config, self.seed)
        for (_, src), (_, dst) in zip(self.params(), other.params()):
            dst.data = src.data.copy()
        return other

    def arch(self) -> dict:
        return {"vocab_size": self.vocab_size, "seed": self.seed, **self.config.to_dict()}

    def to_checkpoint(self, vocab_path: str = "", config_hash: str = "", extra: dict | None = None) -> Checkpoint:
        tensors = {name: p.data.copy() for name, p in self.params()}
        return Checkpoint(
            kind=self.kind,
            arch=self.arch(),
            tensors=tensors,
            vocab_path=vocab_path,
            config_hash=config_hash,
            extra=extra or {},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "CdssmModel":
        if ckpt.kind != cls.kind:
            raise ConfigError(f"checkpoint kind {ckpt.kind!r} is not {cls.kind!r}")
        arch = ckpt.arch
        model = cls(
            vocab_size=arch["vocab_size"],
            config=CdssmConfig(conv_dim=arch["conv_dim"], semantic_dim=arch["semantic_dim"]),
            seed=arch["seed"],
        )
        for name, p in model.params():
            p.data = ckpt.tensors[name].copy()
        return model

    def param_hash(self) -> str:
        return self.to_checkpoint().param_hash()


# ---------------------------------------------------------------------------
# Deep-Crossing-style annotator


@dataclass(frozen=True)
class DeepCrossingConfig:
    field_dim: int = 64
    n_residual_units: int = 2
    residual_hidden: int = 256
    batchnorm: bool = True

    def to_dict(self) -> dict:
        return {
            "field_dim": self.field_dim,
            "n_residual_units": self.n_residual_units,
            "residual_hidden": self.residual_hidden,
            "batchnorm": self.batchnorm,
        }


class DeepCrossingModel:
    kind = "deep_crossing"

    def __init__(
        self,
        vocab_size: int,
        task_set: TaskSet,
        config: DeepCrossingConfig = DeepCrossingConfig(),
        seed: int = 0,
    ):
        self.vocab_size = vocab_size
        self.task_set = task_set
        self.config = config
        self.seed = seed
        self.training = False
        rng = rng_for(seed, "deep-crossing")
        self.embeddings = {
            name: EmbeddingSum(vocab_size, config.field_dim, rng) for name in FIELD_NAMES
        }
        width = config.field_dim * len(FIELD_NAMES)
        self.residuals = [
            ResidualUnit(width, config.residual_hidden, rng, batchnorm=config.batchnorm)
            for _ in range(config.n_residual_units)
        ]
        self.heads = [Dense(width, 1, rng) for _ in task_set.tasks]

    def train_mode(self, training: bool = True) -> None:
        self.training = training

    def forward(self, fields: FieldBatch) -> tuple[list[Tensor], Tensor]:
        """Per-task head probabilities and the weighted composite score."""
        embedded = [
            ad.relu(self.embeddings[name](fields.fields[name])) for name in FIELD_NAMES
        ]
        h = ad.concat(embedded, axis=1)
        for unit in self.residuals:
            h = unit(h, training=self.training)
        heads = [
            ad.sigmoid(ad.reshape(head(h), (h.shape[0],))) for head in self.heads
        ]
        composite = None
        for task, head in zip(self.task_set.tasks, heads):
            term = ad.mul(head, task.weight)
            composite = term if composite is None else ad.add(composite, term)
        return heads, composite

    def mtl_loss(self, heads: list[Tensor], labels: np.ndarray) -> Tensor:
        """Weighted sum of per-task cross-entropies; labels is [n, n_tasks]."""
        if labels.shape[1] != len(self.task_set):
            raise ConfigError(
                f"label matrix has {labels.shape[1]} tasks, model expects {len(self.task_set)}"
            )
        loss = None
        for j, (task, head) in enumerate(zip(self.task_set.tasks, heads)):
            term = ad.mul(ad.cross_entropy(head, labels[:, j]), task.weight)
            loss = term if loss is None else ad.add(loss, term)
        return loss

    def score(self, fields: FieldBatch, batch_size: int = 4096) -> np.ndarray:
        """Composite scores with a frozen model (eval mode, no graph)."""
        was_training = self.training
        self.train_mode(False)
        out = np.empty(fields.n)
        with ad.no_grad():
            for start in range(0, fields.n, batch_size):
                idx = np.arange(start, min(start + batch_size, fields.n))
                _, composite = self.forward(fields.take(idx))
                out[idx] = composite.data
        self.train_mode(was_training)
        return out

    def params(self):
        out = []
        for name in FIELD_NAMES:
            out += [(f"embed.{name}.{n}", p) for n, p in self.embeddings[name].params()]
        for i, unit in enumerate(self.residuals):
            out += [(f"residual{i}.{n}", p) for n, p in unit.params()]
        for j, head in enumerate(self.heads):
            out += [(f"head.{self.task_set.tasks[j].name}.{n}", p) for n, p in head.params()]
        return out

    def param_tensors(self) -> list[Tensor]:
        return [p for _, p in self.params()]

    def buffers(self):
        out = []
        for i, unit in enumerate(self.residuals):
            out += [(f"residual{i}.{n}", b) for n, b in unit.buffers()]
        return out

    def arch(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "seed": self.seed,
            "task_set": self.task_set.to_dict(),
            **self.config.to_dict(),
        }

    def to_checkpoint(self, vocab_path: str = "", config_hash: str = "", extra: dict | None = None) -> Checkpoint:
        tensors = {name: p.data.copy() for name, p in self.params()}
        tensors.update({f"buffer.{name}": b.copy() for name, b in self.buffers()})
        return Checkpoint(
            kind=self.kind,
            arch=self.arch(),
            tensors=tensors,
            vocab_path=vocab_path,
            config_hash=config_hash,
            extra=extra or {},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "DeepCrossingModel":
        if ckpt.kind != cls.kind:
            raise ConfigError(f"checkpoint kind {ckpt.kind!r} is not {cls.kind!r}")
        arch = ckpt.arch
        model = cls(
            vocab_size=arch["vocab_size"],
            task_set=TaskSet.from_dict(arch["task_set"]),
            config=DeepCrossingConfig(
                field_dim=arch["field_dim"],
                n_residual_units=arch["n_residual_units"],
                residual_hidden=arch["residual_hidden"],
                batchnorm=arch["batchnorm"],
            ),
            seed=arch["seed"],
        )
        for name, p in model.params():
            p.data = ckpt.tensors[name].copy()
        for i, unit in enumerate(model.residuals):
            if unit.bn is not None:
                unit.bn.load_buffers(
                    ckpt.tensors[f"buffer.residual{i}.bn.running_mean"],
                    ckpt.tensors[f"buffer.residual{i}.bn.running_var"],
                )
        return model

    def param_hash(self) -> str:
        return self.to_checkpoint().param_hash()
