"""Input validation helpers shared by estimators and functional entry points."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import NumericError, ShapeError


def check_matrix(X, name="X", min_samples=1, n_features=None):
    """Return ``X`` as a finite 2-D float64 array.

    Raises NumericError for NaN/inf entries and ShapeError when the column
    count differs from ``n_features``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < min_samples:
        raise ShapeError(f"{name} needs at least {min_samples} rows, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise NumericError(name)
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"{name} has {X.shape[1]} columns, expected {n_features}")
    if X.shape[0]:
        X = check_array(X, dtype=np.float64, ensure_min_features=0)
    return X


def check_labels(labels, n_samples, n_clusters=None):
    """Validate a hard assignment and return it as an int64 array."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n_samples:
        raise ShapeError(f"labels must have length {n_samples}, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ValueError("labels must be integers")
    labels = labels.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise ValueError(f"label {labels.min()} out of range")
    if n_clusters is not None and labels.size and labels.max() >= n_clusters:
        raise ValueError(f"label {labels.max()} out of range for {n_clusters} clusters")
    return labels


def check_membership(U, atol=1e-6):
    """Validate a membership matrix: entries in [0, 1], rows summing to one."""
    U = check_matrix(U, "U")
    if np.any(U < -atol) or np.any(U > 1 + atol):
        raise ValueError("membership entries must lie in [0, 1]")
    bad = np.abs(U.sum(axis=1) - 1.0) > atol
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise ValueError(f"membership row {row} sums to {U[row].sum():.9g}, not 1")
    return U
