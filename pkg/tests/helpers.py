"""Independent oracles used across the test suite.

These deliberately avoid the library's own computation paths: gradients come
from central finite differences, and AUC values from O(n^2) pairwise or
per-threshold scans.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from admatch.nn.autodiff import Tensor


def finite_difference_check(
    params: Sequence[Tensor],
    loss_fn: Callable[[], Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> float:
    """Compare analytic gradients of every parameter element against central
    finite differences; returns the max relative error and asserts < tol."""
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        assert grad is not None, "parameter received no gradient"
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = float(loss_fn().data)
            flat[i] = original - eps
            down = float(loss_fn().data)
            flat[i] = original
            fd = (up - down) / (2.0 * eps)
            an = grad.reshape(-1)[i]
            # Relative error where the gradient is meaningful; below the
            # floor this reduces to absolute agreement within tol * 1e-3.
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
            worst = max(worst, err)
    assert worst < tol, f"gradient check failed: max relative error {worst:.3e}"
    return worst


def roc_auc_bruteforce(scores: np.ndarray, labels: np.ndarray) -> float:
    """Pairwise count of positive-over-negative orderings, ties half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos = scores[labels]
    neg = scores[~labels]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def pr_auc_bruteforce(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision by explicit threshold scan over distinct scores,
    descending; tied samples enter together."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    thresholds = np.unique(scores)[::-1]
    ap = 0.0
    prev_tp = 0
    for t in thresholds:
        selected = scores >= t
        tp = int((labels & selected).sum())
        precision = tp / int(selected.sum())
        ap += (tp - prev_tp) / n_pos * precision
        prev_tp = tp
    return float(ap)
