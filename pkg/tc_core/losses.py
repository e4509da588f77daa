"""
Loss family for semi-supervised heading regression.

- supervised_loss: mean squared error on labeled samples
- pairwise_continuity_loss: similarity-weighted hinge on output distance within a sequence
- triplet_continuity_loss: temporally nearer pairs must have smaller output distance than farther ones
- combined_loss: supervised + lambda * continuity

Pair and triplet sums are normalised to means so lambda does not depend on sequence length.
The *_with_grad variants also return d(loss)/d(outputs), used by the regressor backward pass.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

import config
from tc_core.angular import as_output_array
from tc_core.models import LossConfig

logger = logging.getLogger(__name__)


def _frames_array(frames, n: int) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.int64).reshape(-1)
    if len(frames) != n:
        raise ValueError(f"length mismatch: {n} outputs vs {len(frames)} frames")
    return frames


def supervised_loss_with_grad(predictions, labels) -> Tuple[float, np.ndarray]:
    preds = as_output_array(predictions)
    labs = as_output_array(labels)
    if len(preds) != len(labs):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labs)} labels")
    if len(preds) == 0:
        raise ValueError("supervised loss needs at least one sample")
    diff = preds - labs
    n = len(preds)
    loss = float(np.sum(diff * diff)) / n
    return loss, 2.0 * diff / n


def supervised_loss(predictions, labels) -> float:
    """Mean over samples of ||y - f(x)||^2."""
    return supervised_loss_with_grad(predictions, labels)[0]


def similarity(frame_a: int, frame_b: int, alpha: float) -> float:
    """exp(-alpha * |n_a - n_b|)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    return math.exp(-alpha * abs(int(frame_a) - int(frame_b)))


def output_distance(a, b) -> float:
    """Euclidean distance between two output vectors."""
    a = np.asarray(a.as_array() if hasattr(a, "as_array") else a, dtype=np.float64)
    b = np.asarray(b.as_array() if hasattr(b, "as_array") else b, dtype=np.float64)
    return float(np.linalg.norm(a - b))


def _unit_differences(outputs: np.ndarray, i: np.ndarray, j: np.ndarray):
    """Distances D(i, j) and (o_i - o_j) / D, zero where D == 0."""
    diff = outputs[i] - outputs[j]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    safe = np.where(dist > 0.0, dist, 1.0)
    unit = np.where((dist > 0.0)[:, None], diff / safe[:, None], 0.0)
    return dist, unit


def pairwise_continuity_loss_with_grad(outputs, frames, loss_cfg: LossConfig) -> Tuple[float, np.ndarray]:
    outs = as_output_array(outputs)
    n = len(outs)
    if n < 2:
        raise ValueError(f"pairwise continuity loss needs a sequence of length >= 2, got {n}")
    frames = _frames_array(frames, n)

    i, j = np.triu_indices(n, k=1)
    dist, unit = _unit_differences(outs, i, j)
    weight = np.exp(-loss_cfg.alpha * np.abs(frames[i] - frames[j]).astype(np.float64))
    hinge = dist - loss_cfg.margin
    active = hinge > 0.0
    n_pairs = len(i)

    loss = float(np.sum(np.where(active, weight * hinge, 0.0))) / n_pairs

    coeff = np.where(active, weight, 0.0)[:, None] * unit / n_pairs
    grad = np.zeros_like(outs)
    np.add.at(grad, i, coeff)
    np.add.at(grad, j, -coeff)
    return loss, grad


def pairwise_continuity_loss(outputs, frames, loss_cfg: LossConfig) -> float:
    """Mean over unordered pairs of S(i, j) * max(0, D(i, j) - margin)."""
    return pairwise_continuity_loss_with_grad(outputs, frames, loss_cfg)[0]


def _triplet_array(triplets, n: int, frames: np.ndarray) -> np.ndarray:
    trip = np.asarray(triplets, dtype=np.int64)
    if trip.size == 0:
        raise ValueError("triplet list is empty")
    trip = trip.reshape(-1, 3)
    if np.any(trip < 0) or np.any(trip >= n):
        raise ValueError(f"triplet index out of range for sequence of length {n}")
    a, near, far = trip[:, 0], trip[:, 1], trip[:, 2]
    bad = np.abs(frames[a] - frames[near]) >= np.abs(frames[a] - frames[far])
    if np.any(bad):
        k = int(np.argmax(bad))
        raise ValueError(
            f"triplet {tuple(int(x) for x in trip[k])} violates |n_a - n_near| < |n_a - n_far|"
        )
    return trip


def triplet_continuity_loss_with_grad(outputs, frames, triplets) -> Tuple[float, np.ndarray]:
    outs = as_output_array(outputs)
    n = len(outs)
    if n < 3:
        raise ValueError(f"triplet continuity loss needs a sequence of length >= 3, got {n}")
    frames = _frames_array(frames, n)
    trip = _triplet_array(triplets, n, frames)
    a, near, far = trip[:, 0], trip[:, 1], trip[:, 2]

    d_near, u_near = _unit_differences(outs, a, near)
    d_far, u_far = _unit_differences(outs, a, far)
    hinge = d_near - d_far
    active = (hinge > 0.0)[:, None]
    count = len(trip)

    loss = float(np.sum(np.maximum(hinge, 0.0))) / count

    grad = np.zeros_like(outs)
    np.add.at(grad, a, np.where(active, u_near - u_far, 0.0) / count)
    np.add.at(grad, near, np.where(active, -u_near, 0.0) / count)
    np.add.at(grad, far, np.where(active, u_far, 0.0) / count)
    return loss, grad


def triplet_continuity_loss(outputs, frames, triplets) -> float:
    """Mean over (anchor, near, far) of max(0, D(anchor, near) - D(anchor, far))."""
    return triplet_continuity_loss_with_grad(outputs, frames, triplets)[0]


def all_triplets(frames: Sequence[int]) -> np.ndarray:
    """Every (anchor, near, far) index triple with |n_a - n_near| < |n_a - n_far|."""
    frames = np.asarray(frames, dtype=np.int64).reshape(-1)
    n = len(frames)
    if n < 3:
        raise ValueError(f"need a sequence of length >= 3, got {n}")
    a, b, c = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    a, b, c = a.ravel(), b.ravel(), c.ravel()
    keep = (a != b) & (a != c) & (b != c) & (np.abs(frames[a] - frames[b]) < np.abs(frames[a] - frames[c]))
    return np.stack([a[keep], b[keep], c[keep]], axis=1)


def sample_triplets(frames: Sequence[int], count: int, rng: np.random.Generator,
                    near_window: int = 3) -> np.ndarray:
    """
    Draw `count` valid (anchor, near, far) triples from one sequence.

    Anchors are uniform; the near index lies within +-near_window frames of the anchor
    and the far index has a strictly larger temporal gap. Anchors with no valid
    (near, far) choice are redrawn. Only `rng` is mutated.

    Args:
        frames: strictly increasing frame numbers
        count: number of triples
        rng: numpy Generator (consumed)
        near_window: max frame gap for the near sample

    Returns:
        (count, 3) int array of indices
    """
    frames = np.asarray(frames, dtype=np.int64).reshape(-1)
    n = len(frames)
    if n < 3:
        raise ValueError(f"need a sequence of length >= 3 to sample triplets, got {n}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")

    out = np.empty((count, 3), dtype=np.int64)
    idx = np.arange(n)
    filled = 0
    attempts = 0
    while filled < count:
        attempts += 1
        if attempts > 1000 * count:
            raise ValueError("no valid (anchor, near, far) triple found; are frames strictly increasing?")
        anchor = int(rng.integers(n))
        gaps = np.abs(frames - frames[anchor])
        near_pool = idx[(idx != anchor) & (gaps <= near_window)]
        if near_pool.size == 0:
            near_pool = idx[idx != anchor]
        near = int(near_pool[rng.integers(near_pool.size)])
        far_pool = idx[gaps > gaps[near]]
        if far_pool.size == 0:
            continue
        far = int(far_pool[rng.integers(far_pool.size)])
        out[filled] = (anchor, near, far)
        filled += 1
    return out


def combined_loss(supervised: float, continuity: float, lambda_: float,
                  supervised_weight: float = 1.0) -> float:
    """supervised_weight * supervised + lambda * continuity."""
    for name, value in (("supervised", supervised), ("continuity", continuity)):
        if not math.isfinite(value):
            raise ValueError(f"{name} loss must be finite, got {value}")
        if value < 0:
            raise ValueError(f"{name} loss must be non-negative, got {value}")
    if lambda_ < 0 or supervised_weight < 0:
        raise ValueError("loss weights must be non-negative")
    return supervised_weight * supervised + lambda_ * continuity


def continuity_loss_with_grad(outputs, frames, loss_cfg: LossConfig,
                              triplets: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """
    Dispatch on loss_cfg.variant.

    Without explicit triplets, windows of up to EXHAUSTIVE_TRIPLET_MAX_FRAMES frames use
    every triple; longer ones use loss_cfg.triplet_samples_per_sequence triples drawn
    from a generator seeded with SIDE_TRIPLET_SEED, so no caller stream is consumed.
    """
    if loss_cfg.variant == "pairwise":
        return pairwise_continuity_loss_with_grad(outputs, frames, loss_cfg)
    if triplets is None:
        triplets = default_triplets(frames, loss_cfg)
    return triplet_continuity_loss_with_grad(outputs, frames, triplets)


def default_triplets(frames: Sequence[int], loss_cfg: LossConfig) -> np.ndarray:
    if len(frames) <= config.EXHAUSTIVE_TRIPLET_MAX_FRAMES:
        return all_triplets(frames)
    rng = np.random.default_rng(config.SIDE_TRIPLET_SEED)
    return sample_triplets(frames, loss_cfg.triplet_samples_per_sequence, rng, loss_cfg.near_window)
