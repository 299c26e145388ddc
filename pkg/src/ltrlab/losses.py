"""Training objectives for relevance scorers, with analytic gradients.

Three objectives over a vector of per-document scores:

* ``infonce``    - listwise softmax cross-entropy with one positive,
                   L = logsumexp(s) - s[positive]
* ``ranknet``    - pairwise logistic loss over all ordered pairs of a
                   teacher-ranked list, L = sum_{i<j} log(1 + exp(s_j - s_i))
* ``adr_mse``    - discounted squared error between each document's target
                   rank and its smooth approximate rank,
                   L = (1/n) sum_i (i - pi_i)^2 / log2(i + 1)

All three depend only on score differences (translation invariant) and
return the loss value together with its gradient w.r.t. every score.
The smooth rank shared by the ADR loss is

    pi_i = 1 + sum_{j != i} sigmoid(alpha * (s_j - s_i))

so a higher score means a smaller (better) approximate rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = ["ApproxConfig", "LossOutput", "infonce", "ranknet", "smooth_rank", "adr_mse"]


@dataclass(frozen=True)
class ApproxConfig:
    """Sharpness of the sigmoid in the smooth rank approximation."""

    alpha: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ValueError(f"alpha must be a positive finite number, got {self.alpha}")


@dataclass(frozen=True)
class LossOutput:
    """A non-negative loss value and its gradient w.r.t. each input score."""

    value: float
    grad: np.ndarray


def _as_scores(scores, name: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} requires a non-empty 1-d score vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} received non-finite scores")
    return arr


def infonce(scores, positive_index: int) -> LossOutput:
    """Softmax cross-entropy of the positive against the whole candidate set.

    Computed as logsumexp(scores) - scores[positive_index] with max
    subtraction, so scores of any magnitude are safe. The gradient is
    softmax(scores) minus the one-hot positive indicator.
    """
    s = _as_scores(scores, "infonce")
    n = s.size
    if not 0 <= positive_index < n:
        raise ValueError(f"positive_index {positive_index} out of range for {n} scores")
    z = s - s.max()
    expz = np.exp(z)
    total = expz.sum()
    # Mathematically >= 0; the max() only strips 1-ulp rounding noise.
    value = max(float(np.log(total) - z[positive_index]), 0.0)
    grad = expz / total
    grad[positive_index] -= 1.0
    return LossOutput(value, grad)


def ranknet(scores) -> LossOutput:
    """Pairwise logistic loss over a list given in teacher order (best first).

    Every ordered pair (i, j) with j below i contributes
    softplus(s_j - s_i); the softplus is evaluated via logaddexp so large
    score gaps do not overflow.
    """
    s = _as_scores(scores, "ranknet")
    n = s.size
    if n == 1:
        return LossOutput(0.0, np.zeros(1))
    diff = s[None, :] - s[:, None]  # diff[i, j] = s_j - s_i
    upper = np.triu_indices(n, k=1)
    value = float(np.logaddexp(0.0, diff[upper]).sum())
    pair = np.triu(expit(diff), k=1)  # sigmoid(s_j - s_i) for j > i
    grad = pair.sum(axis=0) - pair.sum(axis=1)
    return LossOutput(value, grad)


def smooth_rank(scores, cfg: ApproxConfig = ApproxConfig()) -> np.ndarray:
    """Differentiable rank estimates from pairwise sigmoid comparisons.

    Returns pi with pi_i = 1 + sum_{j != i} sigmoid(alpha * (s_j - s_i)).
    Because opposing sigmoids sum to one, sum(pi) = n(n+1)/2 for any input.
    """
    s = _as_scores(scores, "smooth_rank")
    mat = expit(cfg.alpha * (s[None, :] - s[:, None]))
    # Row sums include the diagonal sigmoid(0) = 0.5, hence the +0.5 offset.
    return mat.sum(axis=1) + 0.5


def adr_mse(scores, cfg: ApproxConfig = ApproxConfig()) -> LossOutput:
    """Discounted rank MSE against the teacher order (scores in teacher order).

    Position i (1-based) has target rank i and weight 1/log2(i+1); the loss
    averages the weighted squared gaps between targets and smooth ranks.
    The gradient chains through every pairwise sigmoid, since each smooth
    rank depends on all scores.
    """
    s = _as_scores(scores, "adr_mse")
    n = s.size
    alpha = cfg.alpha
    mat = expit(alpha * (s[None, :] - s[:, None]))
    pi = mat.sum(axis=1) + 0.5
    targets = np.arange(1, n + 1, dtype=np.float64)
    weights = 1.0 / np.log2(targets + 1.0)
    gaps = targets - pi
    value = float(np.sum(weights * gaps * gaps) / n)
    # dL/dpi_i, then through dpi_i/ds_k = alpha*B[i,k] (k != i),
    # dpi_i/ds_i = -alpha*sum_j B[i,j], with B = sigmoid' off-diagonal.
    dpi = (2.0 / n) * weights * (pi - targets)
    bmat = mat * (1.0 - mat)
    np.fill_diagonal(bmat, 0.0)
    grad = alpha * (bmat.T @ dpi - dpi * bmat.sum(axis=1))
    return LossOutput(value, grad)
