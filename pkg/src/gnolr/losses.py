"""Nested proportional-odds probability model and training losses.

The cumulative probability of a user-item pair sitting at or below
engagement level c is sigma(a_c - c * gamma * K_c), where K_c is the
cosine of the level-c prefix embeddings.  Because each prefix concatenates
unit sub-embeddings, c * K_c equals the running sum of per-level
sub-similarities, so all losses below are written in terms of those sums.

Every probability entering a log is clipped to [clip_floor, inf); a
clipped term contributes exactly -log(clip_floor) and passes no gradient
(clamp semantics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .feedback import ThresholdSet
from .tensor import stable_sigmoid, stable_softplus


@dataclass(frozen=True)
class GnolrHyper:
    """Ordinal thresholds, kernel reshaping factor, probability clip floor."""

    thresholds: ThresholdSet
    gamma: float
    clip_floor: float = 1e-6

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ArgumentError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.clip_floor < 1:
            raise ArgumentError(f"clip floor must lie in (0, 1), got {self.clip_floor}")

    @property
    def num_levels(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class CategoryDistribution:
    """P(k = c) for c = 1..T+1; sums to 1 by telescoping (pre-clip)."""

    probs: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)


def _check_kernels(kernels: Sequence[float], hyper: GnolrHyper) -> np.ndarray:
    arr = np.asarray(kernels, dtype=np.float64).reshape(-1)
    if arr.shape[0] != hyper.num_levels:
        raise ArgumentError(f"expected {hyper.num_levels} kernel values, got {arr.shape[0]}")
    return arr


def _cumulative_all(kernels: np.ndarray, hyper: GnolrHyper) -> np.ndarray:
    """sigma(a_c - c * gamma * K_c) for c = 1..T."""
    a = hyper.thresholds.as_array()
    c = np.arange(1, hyper.num_levels + 1, dtype=np.float64)
    return stable_sigmoid(a - c * hyper.gamma * kernels)


def cumulative_prob(c: int, kernel_value: float, hyper: GnolrHyper) -> float:
    """P(k <= c) given the level-c prefix kernel.

    Level 0 is the virtual null category (exactly 0); level T+1 covers
    everything (exactly 1).
    """
    t = hyper.num_levels
    if not 0 <= c <= t + 1:
        raise ArgumentError(f"category {c} outside 0..{t + 1}")
    if c == 0:
        return 0.0
    if c == t + 1:
        return 1.0
    a_c = hyper.thresholds.values[c - 1]
    return float(stable_sigmoid(a_c - c * hyper.gamma * kernel_value))


def category_distribution(kernels: Sequence[float], hyper: GnolrHyper) -> CategoryDistribution:
    """P(k = c) = P(k <= c) - P(k <= c-1) for c = 1..T+1.

    Raw differences may be negative when the kernel sequence breaks the
    cumulative ordering; clipping is the loss's job, not this function's.
    """
    karr = _check_kernels(kernels, hyper)
    cum = _cumulative_all(karr, hyper)
    full = np.concatenate(([0.0], cum, [1.0]))
    return CategoryDistribution(tuple(np.diff(full).tolist()))


def task_score(c: int, kernels: Sequence[float], hyper: GnolrHyper) -> float:
    """P(k > c) = 1 - sigma(a_c - c * gamma * K_c); c = T is the unified score."""
    if not 1 <= c <= hyper.num_levels:
        raise ArgumentError(f"task level {c} outside 1..{hyper.num_levels}")
    karr = _check_kernels(kernels, hyper)
    return 1.0 - cumulative_prob(c, float(karr[c - 1]), hyper)


def _clipped_log(p: float, clip_floor: float) -> float:
    return math.log(max(p, clip_floor))


def subtask_loss(t: int, label_k: int, kernels: Sequence[float], hyper: GnolrHyper) -> float:
    """Negative log-likelihood of subtask t, whose top category is t+1.

    The label collapses to min(k, t+1); within the subtask the cumulative
    probability of level t+1 is 1, so the top category's probability is
    1 - P(k <= t).
    """
    big_t = hyper.num_levels
    if not 1 <= t <= big_t:
        raise ArgumentError(f"subtask index {t} outside 1..{big_t}")
    if not 1 <= label_k <= big_t + 1:
        raise ArgumentError(f"label {label_k} outside 1..{big_t + 1}")
    karr = _check_kernels(kernels, hyper)
    m = min(label_k, t + 1)
    if m == t + 1:
        p = 1.0 - cumulative_prob(t, float(karr[t - 1]), hyper)
    else:
        upper = cumulative_prob(m, float(karr[m - 1]), hyper)
        lower = cumulative_prob(m - 1, float(karr[m - 2]) if m >= 2 else 0.0, hyper)
        p = upper - lower
    return -_clipped_log(p, hyper.clip_floor)


def gnolr_total_loss(label_k: int, kernels: Sequence[float], hyper: GnolrHyper) -> float:
    """Sum of all subtask losses for one sample."""
    return sum(subtask_loss(t, label_k, kernels, hyper) for t in range(1, hyper.num_levels + 1))


def neural_olr_loss(label_k: int, single_kernel: float, hyper: GnolrHyper) -> float:
    """Plain ordinal NLL with one shared kernel at every level.

    Uses the same c * gamma scaling as the nested model so the two are
    directly comparable.
    """
    losses, _ = olr_shared_batch(
        np.asarray([label_k]), np.asarray([single_kernel], dtype=np.float64), hyper
    )
    return float(losses[0])


def bce_loss(logit: float, label: int, positive_weight: float = 1.0):
    """Weighted binary cross-entropy in log-sum-exp form (no overflow)."""
    if positive_weight < 1:
        raise ArgumentError(f"positive weight must be >= 1, got {positive_weight}")
    logit = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    out = positive_weight * y * stable_softplus(-logit) + (1.0 - y) * stable_softplus(logit)
    if out.ndim == 0:
        return float(out)
    return out


def listnet_loss(
    lists: Sequence[tuple[np.ndarray, np.ndarray]],
    hyper: GnolrHyper,
    use_log: bool = True,
) -> float:
    """Softmax listwise loss over per-list items, averaged across lists.

    Each list is (kernels, is_positive) with kernels of shape (n_items, T);
    an item's logit is gamma * T * K_T, the unified score's logit.  With
    ``use_log`` (default) each positive contributes -log softmax at its
    position; the unlogged variant scores -softmax directly.  Lists without
    positives contribute 0.
    """
    if not lists:
        raise ArgumentError("need at least one list")
    total = 0.0
    for kernels, is_positive in lists:
        karr = np.asarray(kernels, dtype=np.float64)
        if karr.ndim != 2 or karr.shape[1] != hyper.num_levels:
            raise ArgumentError(f"list kernels must be (n, {hyper.num_levels}), got {karr.shape}")
        if karr.shape[0] == 0:
            raise ArgumentError("lists must contain at least one item")
        pos = np.asarray(is_positive, dtype=bool)
        logits = hyper.gamma * hyper.num_levels * karr[:, -1]
        loss, _ = listnet_list_batch(logits, pos, use_log=use_log)
        total += loss
    return total / len(lists)


def combined_loss(pointwise: float, listwise: float) -> float:
    """Unweighted sum of the ordinal loss and the listwise loss."""
    return pointwise + listwise


# ---------------------------------------------------------------------------
# Vectorized batch paths with analytic gradients (training internals)
# ---------------------------------------------------------------------------


def _validate_batch(labels: np.ndarray, num_levels: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ArgumentError("labels must be 1-D")
    if labels.size and (labels.min() < 1 or labels.max() > num_levels + 1):
        raise ArgumentError(f"labels outside 1..{num_levels + 1}")
    return labels


def _cumulative_from_dots(dots: np.ndarray, hyper: GnolrHyper) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative probs S (B, T) and their logit-slope parts S(1-S)."""
    a = hyper.thresholds.as_array()
    cs = np.cumsum(dots, axis=1)
    s = stable_sigmoid(a[None, :] - hyper.gamma * cs)
    return s, s * (1.0 - s)


def gnolr_batch(
    labels: np.ndarray, dots: np.ndarray, hyper: GnolrHyper
) -> tuple[np.ndarray, np.ndarray]:
    """Nested subtask-summed loss for a batch.

    ``dots[:, j]`` is the level-(j+1) sub-embedding similarity; per sample
    the loss is sum over subtasks t of -log P(min(k, t+1) | subtask t).
    Returns per-sample losses (B,) and d(loss_i)/d(dots_i) (B, T).
    """
    dots = np.asarray(dots, dtype=np.float64)
    big_t = hyper.num_levels
    labels = _validate_batch(labels, big_t)
    n = labels.shape[0]
    if dots.shape != (n, big_t):
        raise ArgumentError(f"dots must be ({n}, {big_t}), got {dots.shape}")
    s, s_slope = _cumulative_from_dots(dots, hyper)
    floor = hyper.clip_floor

    losses = np.zeros(n)
    dl_ds = np.zeros_like(s)
    levels = np.arange(1, big_t + 1)[None, :]

    # Subtasks t < k each see the sample at their own top category:
    # one -log(1 - S_t) term per such t.
    top_mask = levels < labels[:, None]
    p_top = 1.0 - s
    top_live = p_top > floor
    losses += np.where(top_mask, -np.log(np.maximum(p_top, floor)), 0.0).sum(axis=1)
    dl_ds += np.where(top_mask & top_live, 1.0 / np.maximum(p_top, floor), 0.0)

    # Subtasks t >= k share the interior term -log(S_k - S_{k-1});
    # there are T - k + 1 of them.
    interior = labels <= big_t
    idx = np.nonzero(interior)[0]
    if idx.size:
        k = labels[idx]
        upper = s[idx, k - 1]
        lower = np.where(k >= 2, s[idx, np.maximum(k - 2, 0)], 0.0)
        p_int = upper - lower
        copies = (big_t - k + 1).astype(np.float64)
        live = p_int > floor
        losses[idx] += copies * -np.log(np.maximum(p_int, floor))
        coef = np.where(live, copies / np.maximum(p_int, floor), 0.0)
        dl_ds[idx, k - 1] -= coef
        two_up = idx[k >= 2]
        dl_ds[two_up, k[k >= 2] - 2] += coef[k >= 2]

    # S_c = sigma(a_c - gamma * cumsum(dots)_c), so each dot feeds every
    # cumulative at or above its level.
    per_level = dl_ds * s_slope * -hyper.gamma
    grad_dots = np.cumsum(per_level[:, ::-1], axis=1)[:, ::-1]
    return losses, grad_dots


def _olr_core(
    labels: np.ndarray, s: np.ndarray, floor: float
) -> tuple[np.ndarray, np.ndarray]:
    """Single-term ordinal NLL given cumulative probs; returns losses, dL/dS."""
    n, big_t = s.shape
    full = np.concatenate((np.zeros((n, 1)), s, np.ones((n, 1))), axis=1)
    rows = np.arange(n)
    p = full[rows, labels] - full[rows, labels - 1]
    live = p > floor
    losses = -np.log(np.maximum(p, floor))
    dl_ds = np.zeros_like(s)
    coef = np.where(live, 1.0 / np.maximum(p, floor), 0.0)
    has_upper = labels <= big_t
    dl_ds[rows[has_upper], labels[has_upper] - 1] -= coef[has_upper]
    has_lower = labels >= 2
    dl_ds[rows[has_lower], labels[has_lower] - 2] += coef[has_lower]
    return losses, dl_ds


def olr_nested_batch(
    labels: np.ndarray, dots: np.ndarray, hyper: GnolrHyper
) -> tuple[np.ndarray, np.ndarray]:
    """Plain (single-term) ordinal NLL on nested prefix kernels."""
    dots = np.asarray(dots, dtype=np.float64)
    labels = _validate_batch(labels, hyper.num_levels)
    s, s_slope = _cumulative_from_dots(dots, hyper)
    losses, dl_ds = _olr_core(labels, s, hyper.clip_floor)
    per_level = dl_ds * s_slope * -hyper.gamma
    grad_dots = np.cumsum(per_level[:, ::-1], axis=1)[:, ::-1]
    return losses, grad_dots


def olr_percategory_batch(
    labels: np.ndarray, dots: np.ndarray, hyper: GnolrHyper
) -> tuple[np.ndarray, np.ndarray]:
    """Plain ordinal NLL where level c sees only its own sub-similarity.

    Keeps the c * gamma scaling so it differs from the nested variant only
    in dropping the prefix aggregation.
    """
    dots = np.asarray(dots, dtype=np.float64)
    big_t = hyper.num_levels
    labels = _validate_batch(labels, big_t)
    a = hyper.thresholds.as_array()
    c = np.arange(1, big_t + 1, dtype=np.float64)
    s = stable_sigmoid(a[None, :] - c[None, :] * hyper.gamma * dots)
    s_slope = s * (1.0 - s)
    losses, dl_ds = _olr_core(labels, s, hyper.clip_floor)
    grad_dots = dl_ds * s_slope * (-c[None, :] * hyper.gamma)
    return losses, grad_dots


def olr_shared_batch(
    labels: np.ndarray, kernel: np.ndarray, hyper: GnolrHyper
) -> tuple[np.ndarray, np.ndarray]:
    """Plain ordinal NLL with one shared kernel per sample (one tower pair)."""
    kernel = np.asarray(kernel, dtype=np.float64).reshape(-1)
    big_t = hyper.num_levels
    labels = _validate_batch(labels, big_t)
    a = hyper.thresholds.as_array()
    c = np.arange(1, big_t + 1, dtype=np.float64)
    s = stable_sigmoid(a[None, :] - c[None, :] * hyper.gamma * kernel[:, None])
    s_slope = s * (1.0 - s)
    losses, dl_ds = _olr_core(labels, s, hyper.clip_floor)
    grad_kernel = (dl_ds * s_slope * (-c[None, :] * hyper.gamma)).sum(axis=1)
    return losses, grad_kernel


def bce_batch(
    logits: np.ndarray, labels: np.ndarray, positive_weight: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Stable weighted BCE; returns per-sample losses and d/d logit."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    w = np.where(y > 0, positive_weight, 1.0)
    losses = w * (y * stable_softplus(-logits) + (1.0 - y) * stable_softplus(logits))
    sig = stable_sigmoid(logits)
    grads = w * (sig - y)
    return losses, grads


def listnet_list_batch(
    logits: np.ndarray, positives: np.ndarray, use_log: bool = True
) -> tuple[float, np.ndarray]:
    """Loss and gradient for one list; zero-positive lists contribute nothing."""
    logits = np.asarray(logits, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if not pos.any():
        return 0.0, np.zeros_like(logits)
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    softmax = exp / exp.sum()
    n_pos = int(pos.sum())
    if use_log:
        lse = math.log(exp.sum()) + logits.max()
        loss = float(n_pos * lse - logits[pos].sum())
        grad = n_pos * softmax - pos.astype(np.float64)
    else:
        loss = float(-softmax[pos].sum())
        grad = softmax * (softmax[pos].sum() - pos.astype(np.float64))
    return loss, grad
