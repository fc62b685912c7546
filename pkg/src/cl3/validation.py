"""Input validation helpers shared by the core modules and the estimator."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_features(X, dim: int | None = None, allow_empty: bool = False) -> np.ndarray:
    """Coerce X to a finite float64 matrix of shape (n_samples, n_features)."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D feature matrix, got ndim={arr.ndim}")
    if not allow_empty and arr.shape[0] == 0:
        raise ValidationError("feature matrix has no rows")
    if dim is not None and arr.shape[1] != dim:
        raise ValidationError(f"expected feature dim {dim}, got {arr.shape[1]}")
    if arr.size and not np.isfinite(arr).all():
        raise ValidationError("features contain non-finite values")
    return arr


def check_labels(y, n_samples: int | None = None) -> np.ndarray:
    """Coerce y to an int64 vector of binary labels (0 healthy, 1 covid)."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"expected a 1-D label vector, got ndim={arr.ndim}")
    if n_samples is not None and arr.shape[0] != n_samples:
        raise ValidationError(
            f"label count {arr.shape[0]} does not match sample count {n_samples}"
        )
    if arr.size:
        values = np.unique(arr)
        if not np.isin(values, (0, 1)).all():
            bad = [v for v in values.tolist() if v not in (0, 1)]
            raise ValidationError(f"labels must be 0 or 1, got {bad}")
    return arr.astype(np.int64)


def check_fraction(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValidationError(f"{name} must be in (0, 1), got {value}")
    return value


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0.0 or not np.isfinite(value):
        raise ValidationError(f"{name} must be positive, got {value}")
    return value


def check_positive_int(name: str, value: int) -> int:
    if int(value) != value or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value}")
    return int(value)
