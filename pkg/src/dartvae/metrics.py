"""Cluster-validity metrics for hard labels and fuzzy membership matrices."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import HardAssignment, SoftAssignment, harden
from .rules import violation_report
from .validation import check_labels, check_matrix, check_membership

HARD_KEYS = ("silhouette", "davies_bouldin", "calinski_harabasz")
SOFT_KEYS = ("fpc", "fpe", "mean_membership", "fuzzy_silhouette")


def _pairwise(X):
    return np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))


def _prepare(Z, labels, min_clusters=2):
    X = check_matrix(Z, "Z")
    labels = check_labels(labels, X.shape[0])
    present, labels = np.unique(labels, return_inverse=True)
    if present.size < min_clusters:
        raise ValueError(f"need at least {min_clusters} non-empty clusters, got {present.size}")
    return X, labels.reshape(-1), present.size


def silhouette_samples(Z, labels):
    """Per-sample silhouette; members of singleton clusters score 0."""
    X, labels, k = _prepare(Z, labels)
    D = _pairwise(X)
    n = X.shape[0]
    sizes = np.bincount(labels, minlength=k)
    sums = np.zeros((n, k))
    for c in range(k):
        sums[:, c] = D[:, labels == c].sum(axis=1)
    own = sizes[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    means = sums / sizes[None, :]
    means[np.arange(n), labels] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return s


def silhouette(Z, labels):
    """Mean silhouette coefficient (Euclidean)."""
    return float(silhouette_samples(Z, labels).mean())


def davies_bouldin(Z, labels):
    """Mean over clusters of the worst (s_i + s_j) / d(c_i, c_j) ratio.

    ``s_i`` is the mean distance of cluster members to their centroid.
    """
    X, labels, k = _prepare(Z, labels)
    C = np.array([X[labels == c].mean(axis=0) for c in range(k)])
    s = np.array([np.linalg.norm(X[labels == c] - C[c], axis=1).mean() for c in range(k)])
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            d = float(np.linalg.norm(C[i] - C[j]))
            if d == 0:
                raise ValueError(f"clusters {i} and {j} have coincident centroids")
            worst[i] = max(worst[i], (s[i] + s[j]) / d)
    return float(worst.mean())


def calinski_harabasz(Z, labels):
    """Between/within dispersion ratio ``[B/(k-1)] / [W/(N-k)]``.

    Returns ``inf`` when the within-cluster dispersion is zero.
    """
    X, labels, k = _prepare(Z, labels)
    n = X.shape[0]
    if n <= k:
        raise ValueError(f"calinski_harabasz needs N > k, got N={n}, k={k}")
    mean = X.mean(axis=0)
    B = W = 0.0
    for c in range(k):
        P = X[labels == c]
        centre = P.mean(axis=0)
        B += P.shape[0] * float(np.sum((centre - mean) ** 2))
        W += float(np.sum((P - centre) ** 2))
    if W == 0:
        return math.inf
    return (B / (k - 1)) / (W / (n - k))


def fpc(U):
    """Fuzzy partition coefficient, ``mean_i sum_k u_ik^2``."""
    U = check_membership(U)
    return float(np.sum(U**2) / U.shape[0])


def fpe(U):
    """Fuzzy partition entropy with ``0 ln 0 = 0``."""
    U = check_membership(U)
    positive = U > 0
    logs = np.zeros_like(U)
    logs[positive] = np.log(U[positive])
    return float(-np.sum(U * logs) / U.shape[0])


def mean_membership(U):
    U = check_membership(U)
    return float(U.max(axis=1).mean())


def fuzzy_silhouette(Z, U, gamma=1.0):
    """Silhouette weighted by the gap between each sample's top two memberships."""
    U = check_membership(U)
    X = check_matrix(Z, "Z")
    if U.shape[0] != X.shape[0]:
        raise ValueError(f"U has {U.shape[0]} rows, Z has {X.shape[0]}")
    if U.shape[1] < 2:
        raise ValueError("fuzzy silhouette needs at least two clusters")
    top = np.sort(U, axis=1)
    w = (top[:, -1] - top[:, -2]) ** gamma
    if not np.any(w > 0):
        raise ValueError("all fuzzy silhouette weights are zero")
    s = silhouette_samples(X, np.argmax(U, axis=1))
    return float(np.sum(w * s) / np.sum(w))


@dataclass
class EvaluationReport:
    hard: dict
    violations: dict
    metadata: dict = field(default_factory=dict)
    soft: dict = None

    def to_dict(self):
        out = {"metadata": self.metadata, "hard": self.hard}
        if self.soft is not None:
            out["soft"] = self.soft
        out["violations"] = self.violations
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        return cls(hard=doc["hard"], violations=doc["violations"],
                   metadata=doc.get("metadata", {}), soft=doc.get("soft"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def summary_row(self):
        """Flat mapping for one row of a cross-configuration table."""
        row = {
            "config_id": self.metadata.get("config_id", ""),
            "method": self.metadata.get("method", ""),
            "k": self.metadata.get("k", ""),
            "seed": self.metadata.get("seed", ""),
        }
        row.update({key: self.hard.get(key) for key in HARD_KEYS})
        row.update({key: (self.soft or {}).get(key) for key in SOFT_KEYS})
        for rid in self.violations["rule_ids"]:
            row[f"violations.{rid}"] = self.violations["counts"][rid]
            row[f"per_cluster.{rid}"] = self.violations["per_cluster_mean"][rid]
        row["violations.total"] = self.violations["total"]
        return row


def evaluate(Z, assignment, ruleset, A, metadata=None, refined=None):
    """Fill hard metrics, soft metrics (for a SoftAssignment) and violations.

    ``refined`` overrides the labels used for hard metrics and violation
    counts; soft metrics always come from the membership matrix.
    """
    X = check_matrix(Z, "Z")
    soft = None
    if isinstance(assignment, SoftAssignment):
        U = assignment.memberships
        soft = {
            "fpc": fpc(U),
            "fpe": fpe(U),
            "mean_membership": mean_membership(U),
            "fuzzy_silhouette": fuzzy_silhouette(X, U),
        }
        hard_assignment = harden(assignment, X)
    elif isinstance(assignment, HardAssignment):
        hard_assignment = assignment
    else:
        raise TypeError(f"unsupported assignment type {type(assignment).__name__}")
    if refined is not None:
        hard_assignment = refined
    labels = hard_assignment.labels
    hard = {
        "silhouette": silhouette(X, labels),
        "davies_bouldin": davies_bouldin(X, labels),
        "calinski_harabasz": calinski_harabasz(X, labels),
    }
    viol = violation_report(ruleset, labels, A, n_clusters=hard_assignment.k).to_dict()
    meta = dict(metadata or {})
    meta.setdefault("k", int(hard_assignment.k))
    return EvaluationReport(hard=hard, violations=viol, metadata=meta, soft=soft)
