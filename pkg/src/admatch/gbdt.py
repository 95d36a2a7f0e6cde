"""Gradient-boosted regression trees on lexical features, boosting logistic
loss with exact greedy split search and Newton leaf values.

Leaf values are the closed-form Newton step -G / (H + lambda) over the leaf's
gradient/hessian sums; shrinkage scales every tree's contribution at predict
time. Split search enumerates midpoints between consecutive distinct sorted
feature values, so training is deterministic for a fixed input order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .nn.autodiff import _stable_sigmoid


@dataclass(frozen=True)
class TreeNode:
    feature: int  # -1 marks a leaf
    threshold: float
    left: int
    right: int
    value: float

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


class Tree:
    def __init__(self, nodes: list[TreeNode]):
        self.nodes = nodes
        self.feature = np.array([n.feature for n in nodes], dtype=np.int32)
        self.threshold = np.array([n.threshold for n in nodes])
        self.left = np.array([n.left for n in nodes], dtype=np.int32)
        self.right = np.array([n.right for n in nodes], dtype=np.int32)
        self.value = np.array([n.value for n in nodes])

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        cur = np.zeros(n, dtype=np.int64)
        while True:
            feats = self.feature[cur]
            interior = feats >= 0
            if not interior.any():
                break
            rows = np.flatnonzero(interior)
            go_left = X[rows, feats[rows]] <= self.threshold[cur[rows]]
            cur[rows] = np.where(go_left, self.left[cur[rows]], self.right[cur[rows]])
        return self.value[cur]

    def depth(self) -> int:
        def walk(i: int) -> int:
            node = self.nodes[i]
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(0)


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 200
    max_depth: int = 4
    shrinkage: float = 0.1
    min_samples_leaf: int = 20
    reg_lambda: float = 1.0

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "shrinkage": self.shrinkage,
            "min_samples_leaf": self.min_samples_leaf,
            "reg_lambda": self.reg_lambda,
        }


@dataclass
class GbdtModel:
    trees: list[Tree]
    shrinkage: float
    base_score: float
    n_features: int
    train_loss: list[float] = dc_field(default_factory=list)

    def raw_margin(self, X: np.ndarray) -> np.ndarray:
        X = self._check_features(X)
        margin = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            margin += self.shrinkage * tree.predict(X)
        return margin

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _stable_sigmoid(self.raw_margin(X))

    def _check_features(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"feature length {X.shape[1]} does not match training length {self.n_features}"
            )
        return X


def _logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    # log(1 + exp(-margin*sign)) evaluated stably
    z = np.where(y > 0.5, -margin, margin)
    return float(np.mean(np.logaddexp(0.0, z)))


def _leaf_value(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    return -g_sum / (h_sum + reg_lambda)


def _build_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    config: GbdtConfig,
) -> list[TreeNode]:
    nodes: list[TreeNode] = []

    def grow(node_rows: np.ndarray, depth: int) -> int:
        index = len(nodes)
        nodes.append(TreeNode(-1, 0.0, -1, -1, 0.0))  # placeholder
        g_total = float(g[node_rows].sum())
        h_total = float(h[node_rows].sum())

        split = None
        if depth < config.max_depth and node_rows.size >= 2 * config.min_samples_leaf:
            split = _best_split(X, g, h, node_rows, g_total, h_total, config)
        if split is None:
            nodes[index] = TreeNode(-1, 0.0, -1, -1, _leaf_value(g_total, h_total, config.reg_lambda))
            return index

        feature, threshold = split
        go_left = X[node_rows, feature] <= threshold
        left = grow(node_rows[go_left], depth + 1)
        right = grow(node_rows[~go_left], depth + 1)
        nodes[index] = TreeNode(feature, threshold, left, right, 0.0)
        return index

    grow(rows, 0)
    return nodes


def _best_split(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    g_total: float,
    h_total: float,
    config: GbdtConfig,
) -> tuple[int, float] | None:
    lam = config.reg_lambda
    parent_score = g_total * g_total / (h_total + lam)
    best_gain = 1e-12
    best: tuple[int, float] | None = None
    n = rows.size
    for feature in range(X.shape[1]):
        xs = X[rows, feature]
        order = np.argsort(xs, kind="mergesort")
        xs = xs[order]
        gl = np.cumsum(g[rows[order]])[:-1]
        hl = np.cumsum(h[rows[order]])[:-1]
        counts = np.arange(1, n)
        valid = (
            (xs[:-1] < xs[1:])
            & (counts >= config.min_samples_leaf)
            & (n - counts >= config.min_samples_leaf)
        )
        if not valid.any():
            continue
        gr = g_total - gl
        hr = h_total - hl
        gains = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent_score)
        gains = np.where(valid, gains, -np.inf)
        pos = int(np.argmax(gains))
        if gains[pos] > best_gain:
            best_gain = float(gains[pos])
            best = (feature, float((xs[pos] + xs[pos + 1]) / 2.0))
    return best


def train_gbdt(
    X: np.ndarray,
    y: np.ndarray,
    config: GbdtConfig = GbdtConfig(),
    seed: int = 0,
) -> GbdtModel:
    """Boost logistic loss on binary labels. The split search is exact and
    deterministic; `seed` is accepted for interface uniformity."""
    del seed
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"feature matrix {X.shape} does not match {y.shape[0]} labels")

    prior = float(np.clip(y.mean(), 1e-7, 1.0 - 1e-7))
    base_score = float(np.log(prior / (1.0 - prior)))
    model = GbdtModel(trees=[], shrinkage=config.shrinkage, base_score=base_score, n_features=X.shape[1])

    if len(np.unique(y)) < 2:
        warnings.warn("single-class training labels; returning the class-prior model", stacklevel=2)
        model.train_loss.append(_logistic_loss(np.full(len(y), base_score), y))
        return model

    margin = np.full(X.shape[0], base_score)
    model.train_loss.append(_logistic_loss(margin, y))
    all_rows = np.arange(X.shape[0])
    for _ in range(config.n_trees):
        p = _stable_sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        tree = Tree(_build_tree(X, g, h, all_rows, config))
        model.trees.append(tree)
        margin += config.shrinkage * tree.predict(X)
        model.train_loss.append(_logistic_loss(margin, y))
    return model


# ---------------------------------------------------------------------------
# Persistence: versioned structured text, one tree per block.

_HEADER = "gbdt v1"


def save_gbdt(path: str | Path, model: GbdtModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        _HEADER,
        f"n_features {model.n_features}",
        f"base_score {model.base_score!r}",
        f"shrinkage {model.shrinkage!r}",
        f"n_trees {len(model.trees)}",
    ]
    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t}")
        for i, node in enumerate(tree.nodes):
            if node.is_leaf:
                lines.append(f"node {i} leaf {node.value!r}")
            else:
                lines.append(
                    f"node {i} split {node.feature} {node.threshold!r} {node.left} {node.right}"
                )
        lines.append("end")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_gbdt(path: str | Path) -> GbdtModel:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _HEADER:
        raise DataFormatError(f"{path}: expected header {_HEADER!r}")

    def take(prefix: str, lineno: int) -> str:
        if lineno >= len(lines) or not lines[lineno].startswith(prefix + " "):
            raise DataFormatError(f"{path}:{lineno + 1}: expected {prefix!r} line")
        return lines[lineno][len(prefix) + 1 :]

    n_features = int(take("n_features", 1))
    base_score = float(take("base_score", 2))
    shrinkage = float(take("shrinkage", 3))
    n_trees = int(take("n_trees", 4))
    trees: list[Tree] = []
    cursor = 5
    for t in range(n_trees):
        if take("tree", cursor) != str(t):
            raise DataFormatError(f"{path}:{cursor + 1}: tree blocks out of order")
        cursor += 1
        nodes: list[TreeNode] = []
        while lines[cursor] != "end":
            parts = lines[cursor].split(" ")
            if parts[0] != "node" or int(parts[1]) != len(nodes):
                raise DataFormatError(f"{path}:{cursor + 1}: malformed node line")
            if parts[2] == "leaf":
                nodes.append(TreeNode(-1, 0.0, -1, -1, float(parts[3])))
            elif parts[2] == "split":
                nodes.append(
                    TreeNode(int(parts[3]), float(parts[4]), int(parts[5]), int(parts[6]), 0.0)
                )
            else:
                raise DataFormatError(f"{path}:{cursor + 1}: unknown node type {parts[2]!r}")
            cursor += 1
        cursor += 1
        trees.append(Tree(nodes))
    return GbdtModel(trees=trees, shrinkage=shrinkage, base_score=base_score, n_features=n_features)
