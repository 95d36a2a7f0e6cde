"""Layers shared by the two architectures.

Weights use uniform Glorot initialization; biases draw small uniform values
so an untrained encoder never maps every input to the exact zero vector.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from ..featurize import SequenceBatch
from . import autodiff as ad
from .autodiff import Tensor

LAYER_KINDS = (
    "dense",
    "conv1d-over-words",
    "maxpool-over-words",
    "tanh",
    "relu",
    "sigmoid",
    "batchnorm",
    "residual-unit",
    "embedding-sum",
)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def bias_uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(-0.05, 0.05, size=size)


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = ad.parameter(glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        self.bias = ad.parameter(bias_uniform(rng, n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class EmbeddingSum:
    """Dense projection of per-field trigram counts (counts summed over the
    field's words arrive as a sparse matrix)."""

    kind = "embedding-sum"

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.weight = ad.parameter(glorot_uniform(rng, vocab_size, dim, (vocab_size, dim)))
        self.bias = ad.parameter(bias_uniform(rng, dim))

    def __call__(self, counts: sparse.csr_matrix) -> Tensor:
        return ad.add(ad.sparse_matmul(counts, self.weight), self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class WordConv:
    """Convolution over word positions with window 3 and zero padding.

    Acts directly on trigram count vectors: position t maps to
    W_left x_{t-1} + W_center x_t + W_right x_{t+1} + b, with out-of-range
    neighbors contributing zero. The weight is stored as [vocab, 3*dim] with
    the window slots stacked column-wise.

    The forward pass projects each distinct word of the batch once through
    the weight, then assembles positions with a one-hot sparse matmul, which
    is exactly equivalent to the dense definition above.
    """

    kind = "conv1d-over-words"
    window = 3

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        fan_in = vocab_size * self.window
        self.dim = dim
        self.weight = ad.parameter(
            glorot_uniform(rng, fan_in, dim, (vocab_size, self.window * dim))
        )
        self.bias = ad.parameter(bias_uniform(rng, dim))

    def __call__(self, seq: SequenceBatch) -> Tensor:
        n_words = seq.word_rows.shape[0]
        n, length = seq.ids.shape
        word_proj = ad.sparse_matmul(seq.word_rows, self.weight)  # [n_words, 3*dim]
        slots = ad.reshape(word_proj, (n_words, self.window, self.dim))
        slots = ad.transpose(slots, (1, 0, 2))
        slots = ad.reshape(slots, (self.window * n_words, self.dim))

        # Row (i, t) of the one-hot matrix selects the left/center/right
        # neighbor's projection for its window slot; id 0 is the zero word,
        # so sequence edges contribute nothing.
        left = np.zeros_like(seq.ids)
        left[:, 1:] = seq.ids[:, :-1]
        right = np.zeros_like(seq.ids)
        right[:, :-1] = seq.ids[:, 1:]
        cols = np.stack(
            [left.ravel(), seq.ids.ravel() + n_words, right.ravel() + 2 * n_words], axis=1
        ).ravel()
        rows = np.repeat(np.arange(n * length), self.window)
        onehot = sparse.csr_matrix(
            (np.ones(cols.size, dtype=np.float64), (rows, cols)),
            shape=(n * length, self.window * n_words),
        )
        conv = ad.sparse_matmul(onehot, slots)
        conv = ad.reshape(conv, (n, length, self.dim))
        return ad.add(conv, self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class WordMaxPool:
    kind = "maxpool-over-words"

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        return ad.masked_max(x, mask)

    def params(self):
        return []


class BatchNorm:
    """Batch normalization over axis 0 of a [B, C] tensor.

    Training mode normalizes with batch statistics (differentiated through);
    eval mode applies the frozen running averages, making the layer a pure
    affine map of its input.
    """

    kind = "batchnorm"

    def __init__(self, dim: int, momentum: float = 0.99, eps: float = 1e-5):
        self.gamma = ad.parameter(np.ones(dim))
        self.beta = ad.parameter(np.zeros(dim))
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mean = ad.t_mean(x, axis=0, keepdims=True)
            centered = ad.sub(x, mean)
            var = ad.t_mean(ad.mul(centered, centered), axis=0, keepdims=True)
            inv = ad.power(ad.add(var, self.eps), -0.5)
            normalized = ad.mul(centered, inv)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mean.data.ravel()
            self.running_var = m * self.running_var + (1.0 - m) * var.data.ravel()
        else:
            scale = 1.0 / np.sqrt(self.running_var + self.eps)
            normalized = ad.mul(ad.sub(x, self.running_mean), scale)
        return ad.add(ad.mul(normalized, self.gamma), self.beta)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def load_buffers(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.running_mean = mean.copy()
        self.running_var = var.copy()


class ResidualUnit:
    """x + W2 relu(BN?(W1 x + b1)) + b2; with all-zero inner parameters the
    unit is an exact identity map."""

    kind = "residual-unit"

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, batchnorm: bool = False):
        self.inner = Dense(dim, hidden, rng)
        self.outer = Dense(hidden, dim, rng)
        self.bn = BatchNorm(hidden) if batchnorm else None

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        h = self.inner(x)
        if self.bn is not None:
            h = self.bn(h, training)
        h = ad.relu(h)
        return ad.add(x, self.outer(h))

    def params(self):
        out = [("inner." + n, p) for n, p in self.inner.params()]
        out += [("outer." + n, p) for n, p in self.outer.params()]
        if self.bn is not None:
            out += [("bn." + n, p) for n, p in self.bn.params()]
        return out

    def buffers(self):
        if self.bn is None:
            return []
        return [("bn." + n, b) for n, b in self.bn.buffers()]
