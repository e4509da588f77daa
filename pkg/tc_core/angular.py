"""
Angles on the unit circle.

A heading theta is regressed as the two values (cos theta, sin theta). Raw model
outputs share the same container but are not renormalised: atan2 is invariant to
positive scaling, so decoding works on them directly.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from tc_core.errors import DegenerateEncodingError

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
ACCURACY_THRESHOLD = math.pi / 8


@dataclass(frozen=True)
class HeadingEncoding:
    """(c, s) pair; unit norm only when built by encode()."""
    c: float
    s: float

    def as_array(self) -> np.ndarray:
        return np.array([self.c, self.s], dtype=np.float64)

    @property
    def norm(self) -> float:
        return math.hypot(self.c, self.s)


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation metrics over a set of predictions."""
    mse: float
    mean_angle_diff: float
    accuracy: float
    n_samples: int
    degenerate: int = 0  # predictions with no defined angle (strict=False only)

    def format_line(self) -> str:
        return f"mse={self.mse:.17g} angle_diff={self.mean_angle_diff:.17g} accuracy={self.accuracy:.17g}"


EncodingLike = Union[HeadingEncoding, Sequence[float], np.ndarray]


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    theta = _check_finite("theta", theta)
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    # atan2 returns -pi only for sin == -0.0
    return math.pi if wrapped == -math.pi else wrapped


def encode(theta: float) -> HeadingEncoding:
    theta = _check_finite("theta", theta)
    return HeadingEncoding(math.cos(theta), math.sin(theta))


def decode(enc: EncodingLike) -> float:
    """Angle of (c, s) in (-pi, pi]; raises DegenerateEncodingError near the origin."""
    c, s = _components(enc)
    if not (math.isfinite(c) and math.isfinite(s)):
        raise ValueError(f"encoding must be finite, got ({c}, {s})")
    if math.hypot(c, s) < DEGENERATE_NORM:
        raise DegenerateEncodingError(f"cannot decode near-zero encoding ({c}, {s})")
    theta = math.atan2(s, c)
    return math.pi if theta == -math.pi else theta


def angle_diff(a: float, b: float) -> float:
    """Wrapped absolute difference in [0, pi]."""
    a = _check_finite("a", a)
    b = _check_finite("b", b)
    d = math.fmod(abs(a - b), 2.0 * math.pi)
    return 2.0 * math.pi - d if d > math.pi else d


def encode_many(thetas: Iterable[float]) -> np.ndarray:
    """Vectorised encode: (n,) angles -> (n, 2) array."""
    thetas = np.asarray(list(thetas) if not isinstance(thetas, np.ndarray) else thetas, dtype=np.float64)
    if not np.all(np.isfinite(thetas)):
        raise ValueError("angles must be finite")
    return np.stack([np.cos(thetas), np.sin(thetas)], axis=-1)


def decode_many(outputs: np.ndarray) -> np.ndarray:
    """Vectorised decode; degenerate rows become NaN instead of raising."""
    outputs = np.asarray(outputs, dtype=np.float64).reshape(-1, 2)
    theta = np.arctan2(outputs[:, 1], outputs[:, 0])
    theta = np.where(theta == -np.pi, np.pi, theta)
    degenerate = np.hypot(outputs[:, 0], outputs[:, 1]) < DEGENERATE_NORM
    return np.where(degenerate, np.nan, theta)


def as_output_array(values) -> np.ndarray:
    """Accept a list of HeadingEncoding or an (n, 2) array-like."""
    if isinstance(values, np.ndarray):
        arr = values.astype(np.float64, copy=False)
    else:
        values = list(values)
        if values and isinstance(values[0], HeadingEncoding):
            arr = np.array([[v.c, v.s] for v in values], dtype=np.float64)
        else:
            arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (n, 2) encodings, got shape {arr.shape}")
    return arr


def _components(enc: EncodingLike):
    if isinstance(enc, HeadingEncoding):
        return float(enc.c), float(enc.s)
    c, s = enc
    return float(c), float(s)


def evaluate(predictions, labels, strict: bool = True) -> MetricsReport:
    """
    MSE, mean AngleDiff and accuracy (AngleDiff < pi/8, strict).

    Args:
        predictions: raw model outputs, list of HeadingEncoding or (n, 2) array
        labels: ground-truth encodings, same length
        strict: raise on a degenerate prediction; otherwise count it as error pi

    Returns:
        MetricsReport
    """
    preds = as_output_array(predictions)
    labs = as_output_array(labels)
    if len(preds) != len(labs):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labs)} labels")
    if len(preds) == 0:
        raise ValueError("cannot evaluate an empty set")

    n = len(preds)
    sq_total = 0.0
    diff_total = 0.0
    correct = 0
    degenerate = 0
    # Plain per-sample loop: the result must match a naive recount bit for bit
    for i in range(n):
        pc, ps = float(preds[i, 0]), float(preds[i, 1])
        lc, ls = float(labs[i, 0]), float(labs[i, 1])
        sq_total += (lc - pc) ** 2 + (ls - ps) ** 2
        try:
            diff = angle_diff(decode((pc, ps)), decode((lc, ls)))
        except DegenerateEncodingError:
            if strict:
                raise
            degenerate += 1
            diff = math.pi
        diff_total += diff
        if diff < ACCURACY_THRESHOLD:
            correct += 1

    if degenerate:
        logger.warning(f"{degenerate}/{n} predictions were degenerate (no defined heading)")
    return MetricsReport(
        mse=sq_total / n,
        mean_angle_diff=diff_total / n,
        accuracy=correct / n,
        n_samples=n,
        degenerate=degenerate,
    )


def circular_std(thetas: np.ndarray) -> float:
    """Circular standard deviation sqrt(-2 ln R) of a set of angles."""
    thetas = np.asarray(thetas, dtype=np.float64)
    thetas = thetas[np.isfinite(thetas)]
    if thetas.size == 0:
        return float("nan")
    r = math.hypot(float(np.mean(np.cos(thetas))), float(np.mean(np.sin(thetas))))
    r = min(r, 1.0)
    if r <= 0.0:
        return float("inf")
    return math.sqrt(max(0.0, -2.0 * math.log(r)))


