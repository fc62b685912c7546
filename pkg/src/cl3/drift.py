"""Per-hospital drift decisions gating incremental retraining.

Two detection rules are available: an accuracy-drop test against the
hospital's post-training baseline, and a per-dimension mean-shift z-test
against running feature statistics. The first increment a hospital ever
sees always counts as drifted, forcing the initial training pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .network import Mlp, accuracy
from .validation import check_features

MODE_ACCURACY = "accuracy"
MODE_FEATURE_SHIFT = "feature_shift"
MODE_EITHER = "either"
_MODES = (MODE_ACCURACY, MODE_FEATURE_SHIFT, MODE_EITHER)

REASON_FIRST = "first_increment"
REASON_ACCURACY = "accuracy_drop"
REASON_SHIFT = "feature_shift"
REASON_NONE = "none"


@dataclass(frozen=True)
class DriftVerdict:
    drifted: bool
    observed_accuracy: float
    baseline: float | None
    z_stat: float | None
    reason: str

    def __post_init__(self):
        if self.drifted and self.reason == REASON_NONE:
            raise ValidationError("a drifted verdict needs a reason")


@dataclass(frozen=True)
class DriftDetector:
    """Per-hospital detector state; immutable, updated by returning a new value."""

    accuracy_drop_threshold: float = 0.05
    mean_shift_z_threshold: float = 3.0
    mode: str = MODE_ACCURACY
    baseline_accuracy: float | None = None
    feature_count: int = 0
    feature_mean: np.ndarray | None = None
    feature_m2: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.accuracy_drop_threshold < 1.0:
            raise ValidationError("accuracy_drop_threshold must be in (0, 1)")
        if self.mean_shift_z_threshold <= 0:
            raise ValidationError("mean_shift_z_threshold must be positive")
        if self.mode not in _MODES:
            raise ValidationError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.baseline_accuracy is not None and not 0.0 <= self.baseline_accuracy <= 1.0:
            raise ValidationError("baseline accuracy must lie in [0, 1]")


def _max_mean_shift_z(detector: DriftDetector, X: np.ndarray) -> float | None:
    """Largest per-dimension z for the increment mean vs the running mean."""
    if detector.feature_count < 2 or detector.feature_mean is None:
        return None
    n_inc = X.shape[0]
    inc_mean = X.mean(axis=0)
    variance = detector.feature_m2 / (detector.feature_count - 1)
    se = np.sqrt(np.maximum(variance, 0.0)) / math.sqrt(n_inc)
    diff = np.abs(inc_mean - detector.feature_mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0.0, diff / se, np.where(diff > 0.0, np.inf, 0.0))
    return float(np.max(z))


def assess(detector: DriftDetector, model: Mlp, features, labels) -> DriftVerdict:
    """Pure drift decision for one arriving increment.

    Cold start (no baseline yet) always reports drift so the hospital
    trains on its first increment.
    """
    X = check_features(features)
    observed = accuracy(model, X, labels)
    if detector.baseline_accuracy is None:
        return DriftVerdict(True, observed, None, None, REASON_FIRST)

    z_stat = None
    if detector.mode in (MODE_FEATURE_SHIFT, MODE_EITHER):
        z_stat = _max_mean_shift_z(detector, X)

    if detector.mode in (MODE_ACCURACY, MODE_EITHER):
        drop = detector.baseline_accuracy - observed
        if drop > detector.accuracy_drop_threshold:
            return DriftVerdict(True, observed, detector.baseline_accuracy, z_stat, REASON_ACCURACY)
    if detector.mode in (MODE_FEATURE_SHIFT, MODE_EITHER):
        if z_stat is not None and z_stat > detector.mean_shift_z_threshold:
            return DriftVerdict(True, observed, detector.baseline_accuracy, z_stat, REASON_SHIFT)
    return DriftVerdict(False, observed, detector.baseline_accuracy, z_stat, REASON_NONE)


def update_baseline(
    detector: DriftDetector, post_training_accuracy: float, features=None
) -> DriftDetector:
    """Replace the baseline accuracy and fold new features into running stats."""
    acc = float(post_training_accuracy)
    if not 0.0 <= acc <= 1.0:
        raise ValidationError(f"accuracy must lie in [0, 1], got {acc}")
    out = replace(detector, baseline_accuracy=acc)
    if features is None:
        return out
    X = check_features(features)
    n2 = X.shape[0]
    mean2 = X.mean(axis=0)
    m2_2 = ((X - mean2) ** 2).sum(axis=0)
    if out.feature_mean is None:
        return replace(out, feature_count=n2, feature_mean=mean2, feature_m2=m2_2)
    # Chan's parallel combination of (count, mean, M2) statistics.
    n1 = out.feature_count
    n = n1 + n2
    delta = mean2 - out.feature_mean
    mean = out.feature_mean + delta * (n2 / n)
    m2 = out.feature_m2 + m2_2 + delta * delta * (n1 * n2 / n)
    return replace(out, feature_count=n, feature_mean=mean, feature_m2=m2)
