"""Hard and soft clustering of latent vectors and rule-guided refinement."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .rules import cluster_violation_flags, group_flags
from .validation import check_labels, check_matrix, check_membership


@dataclass
class HardAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float = None
    inertia_history: list = field(default_factory=list)

    @property
    def k(self):
        return self.centroids.shape[0]


@dataclass
class SoftAssignment:
    memberships: np.ndarray
    centroids: np.ndarray
    m: float
    objective: float
    objective_history: list = field(default_factory=list)

    @property
    def k(self):
        return self.centroids.shape[0]


@dataclass
class Move:
    sample: str
    rule: str
    source: int
    target: int
    distance: float

    def to_dict(self):
        return {"sample": self.sample, "rule": self.rule, "from": self.source,
                "to": self.target, "distance": self.distance}


@dataclass
class RefinementLog:
    moves: list = field(default_factory=list)
    passes: int = 0
    unresolved: list = field(default_factory=list)

    def to_dict(self):
        return {
            "moves": [m.to_dict() for m in self.moves],
            "passes": self.passes,
            "unresolved": [{"sample": s, "rule": r} for s, r in self.unresolved],
        }


def _sq_distances(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _centroids(X, labels, k, previous=None):
    C = np.zeros((k, X.shape[1])) if previous is None else previous.copy()
    for c in range(k):
        members = labels == c
        if members.any():
            C[c] = X[members].mean(axis=0)
    return C


def _inertia(X, labels, C):
    return float(((X - C[labels]) ** 2).sum())


def _kmeans_pp(X, k, rng):
    """Indices of k-means++ seeds (D^2 sampling)."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    closest = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        nxt = int(rng.choice(n, p=closest / total)) if total > 0 else int(rng.integers(n))
        idx.append(nxt)
        closest = np.minimum(closest, ((X - X[nxt]) ** 2).sum(axis=1))
    return idx


def _repair_empty(X, labels, C, k):
    for c in range(k):
        if np.any(labels == c):
            continue
        sizes = np.bincount(labels, minlength=k)
        dist = ((X - C[labels]) ** 2).sum(axis=1)
        dist[sizes[labels] <= 1] = -1.0
        idx = int(np.argmax(dist))
        labels[idx] = c
        C[c] = X[idx]
    return labels


def _lloyd(X, C, max_iter, tol):
    k = C.shape[0]
    labels = None
    history = []
    for _ in range(max_iter):
        new = np.argmin(_sq_distances(X, C), axis=1)
        new = _repair_empty(X, new, C, k)
        new_c = _centroids(X, new, k)
        shift = float(np.sqrt(((new_c - C) ** 2).sum(axis=1)).max())
        changed = labels is None or np.any(new != labels)
        labels, C = new, new_c
        history.append(_inertia(X, labels, C))
        if not changed or shift < tol:
            break
    return labels, C, history


def _hartigan(X, labels, k, max_sweeps=100):
    """Single-point transfers that strictly lower the within-cluster SSE.

    Moving x from cluster a to b changes the SSE by
    n_b/(n_b+1)|x-c_b|^2 - n_a/(n_a-1)|x-c_a|^2. A fixpoint of this pass is
    also a Lloyd fixpoint.
    """
    labels = labels.copy()
    sizes = np.bincount(labels, minlength=k).astype(np.float64)
    C = _centroids(X, labels, k)
    for _ in range(max_sweeps):
        moved = False
        for i in range(X.shape[0]):
            a = labels[i]
            if sizes[a] <= 1:
                continue
            d2 = ((C - X[i]) ** 2).sum(axis=1)
            cost = sizes / (sizes + 1.0) * d2
            cost[a] = sizes[a] / (sizes[a] - 1.0) * d2[a]
            b = int(np.argmin(cost))
            if b == a or not cost[b] < cost[a] * (1.0 - 1e-12):
                continue
            C[a] = (C[a] * sizes[a] - X[i]) / (sizes[a] - 1.0)
            C[b] = (C[b] * sizes[b] + X[i]) / (sizes[b] + 1.0)
            sizes[a] -= 1.0
            sizes[b] += 1.0
            labels[i] = b
            moved = True
        if not moved:
            break
    return labels, _centroids(X, labels, k)


def kmeans(Z, k, seed=0, max_iter=300, tol=1e-6, restarts=10):
    """Best-of-``restarts`` k-means.

    Each restart draws k-means++ seeds (a seed set already tried is redrawn
    up to 50 times), runs Lloyd iterations until the centroid shift drops
    below ``tol``, then polishes with Hartigan single-point transfers.
    Empty clusters claim the point farthest from its own centroid.
    """
    X = check_matrix(Z, "Z")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if restarts < 1 or max_iter < 1:
        raise ValueError("restarts and max_iter must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    tried = set()
    for _ in range(restarts):
        for _attempt in range(50):
            idx = _kmeans_pp(X, k, rng)
            key = frozenset(idx)
            if key not in tried:
                break
        tried.add(key)
        labels, C, history = _lloyd(X, X[idx].copy(), max_iter, tol)
        labels, C = _hartigan(X, labels, k)
        history.append(_inertia(X, labels, C))
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = HardAssignment(labels, C, inertia, history)
    return best


def _fcm_memberships(D2, m):
    n, k = D2.shape
    U = np.zeros((n, k))
    zero = D2 <= 0
    hit = zero.any(axis=1)
    if hit.any():
        U[hit, np.argmax(zero[hit], axis=1)] = 1.0
    rest = ~hit
    if rest.any():
        # u_ik = 1 / sum_j (d_ik / d_jk)^(2/(m-1)), evaluated as a softmax in log space
        logits = -np.log(D2[rest]) / (m - 1.0)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        U[rest] = w / w.sum(axis=1, keepdims=True)
    return U


def fuzzy_cmeans(Z, k, m=2.0, seed=0, max_iter=300, tol=1e-6):
    """Fuzzy c-means by alternating centroid and membership updates.

    Stops when the largest membership change falls below ``tol``.
    ``objective_history`` records sum(u^m d^2) after each membership update.
    """
    X = check_matrix(Z, "Z")
    n = X.shape[0]
    if not m > 1:
        raise ValueError(f"fuzzifier m must be > 1, got {m}")
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= N, got k={k}, N={n}")
    rng = np.random.default_rng(seed)
    U = rng.random((n, k))
    U /= U.sum(axis=1, keepdims=True)
    history = []
    C = None
    for _ in range(max_iter):
        W = U**m
        C = (W.T @ X) / W.sum(axis=0)[:, None]
        D2 = _sq_distances(X, C)
        new = _fcm_memberships(D2, m)
        history.append(float(np.sum(new**m * D2)))
        delta = float(np.abs(new - U).max())
        U = new
        if delta < tol:
            break
    return SoftAssignment(U, C, float(m), history[-1], history)


def harden(soft, Z=None):
    """Argmax memberships (ties to the lowest index); centroids carried over."""
    U = check_membership(soft.memberships)
    labels = np.argmax(U, axis=1)
    inertia = None
    if Z is not None:
        inertia = _inertia(check_matrix(Z, "Z"), labels, soft.centroids)
    return HardAssignment(labels, soft.centroids.copy(), inertia)


# -- refinement ------------------------------------------------------------------


def _flag_total(rules, A, schema, members):
    if members.size <= 1:
        return 0
    sub = A[members]
    return int(sum(group_flags(r, sub, schema).sum() for r in rules))


def _flagged_in(rules, A, schema, members, position):
    sub = A[members]
    return any(group_flags(r, sub, schema)[position] for r in rules)


def refine(assignment, ruleset, A, Z, ids=None, max_passes=10):
    """Move rule-violating samples to the nearest cluster that accepts them.

    Rules are visited in file order. For each cluster-level rule, every
    flagged sample is offered to the other clusters in order of centroid
    distance. A cluster accepts the sample when, after insertion, the
    sample is flagged by no cluster-level rule there, and the move strictly
    lowers the combined flag count of the source and destination clusters.
    Centroids are recomputed after each rule. Passes repeat until nothing
    moves or ``max_passes`` is reached. Implication rules cannot be fixed by
    reassignment and are skipped.

    Returns ``(HardAssignment, RefinementLog)``.
    """
    X = check_matrix(Z, "Z")
    A = np.asarray(A, dtype=np.float64)
    n = X.shape[0]
    labels = check_labels(assignment.labels, n, assignment.k).copy()
    if A.shape[0] != n:
        raise ValueError(f"attribute matrix has {A.shape[0]} rows, Z has {n}")
    ids = [str(i) for i in range(n)] if ids is None else [str(i) for i in ids]
    schema = ruleset.schema
    rules = [r for r in ruleset.rules if r.cluster_level]
    k = assignment.k
    C = np.array(assignment.centroids, dtype=np.float64, copy=True)
    log = RefinementLog()

    for _ in range(max_passes):
        log.passes += 1
        moved = False
        for rule in rules:
            flags = cluster_violation_flags(rule, labels, A, schema)
            for i in np.flatnonzero(flags):
                origin = labels[i]
                members = np.flatnonzero(labels == origin)
                pos = int(np.searchsorted(members, i))
                if not group_flags(rule, A[members], schema)[pos]:
                    continue
                origin_before = _flag_total(rules, A, schema, members)
                origin_after = _flag_total(rules, A, schema, np.delete(members, pos))
                dist = np.sqrt(((C - X[i]) ** 2).sum(axis=1))
                for c in np.argsort(dist, kind="stable"):
                    if c == origin:
                        continue
                    dest = np.flatnonzero(labels == c)
                    grown = np.sort(np.append(dest, i))
                    where = int(np.searchsorted(grown, i))
                    if _flagged_in(rules, A, schema, grown, where):
                        continue
                    delta = (origin_after - origin_before
                             + _flag_total(rules, A, schema, grown) - _flag_total(rules, A, schema, dest))
                    if delta >= 0:
                        continue
                    labels[i] = c
                    log.moves.append(Move(ids[i], rule.id, int(origin), int(c), float(dist[c])))
                    moved = True
                    break
            C = _centroids(X, labels, k, previous=C)
        if not moved:
            break

    for rule in rules:
        for i in np.flatnonzero(cluster_violation_flags(rule, labels, A, schema)):
            log.unresolved.append((ids[i], rule.id))
    return HardAssignment(labels, C, _inertia(X, labels, C)), log


# -- estimators ------------------------------------------------------------------


class KMeans(ClusterMixin, TransformerMixin, BaseEstimator):
    """Lloyd k-means with k-means++ restarts.

    Parameters
    ----------
    n_clusters : int
    n_init : int
        Number of seeded restarts; the lowest-inertia run is kept.
    max_iter, tol : stopping controls for a single run.
    random_state : int
    """

    def __init__(self, n_clusters=8, n_init=10, max_iter=300, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        res = kmeans(X, self.n_clusters, seed=self.random_state, max_iter=self.max_iter,
                     tol=self.tol, restarts=self.n_init)
        self.labels_ = res.labels
        self.cluster_centers_ = res.centroids
        self.inertia_ = res.inertia
        self.assignment_ = res
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_matrix(X, n_features=self.cluster_centers_.shape[1])
        return np.argmin(_sq_distances(X, self.cluster_centers_), axis=1)

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_matrix(X, n_features=self.cluster_centers_.shape[1])
        return np.sqrt(_sq_distances(X, self.cluster_centers_))


class FuzzyCMeans(ClusterMixin, BaseEstimator):
    """Fuzzy c-means; ``predict_proba`` gives memberships, ``predict`` their argmax."""

    def __init__(self, n_clusters=2, m=2.0, max_iter=300, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.m = m
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        res = fuzzy_cmeans(X, self.n_clusters, m=self.m, seed=self.random_state,
                           max_iter=self.max_iter, tol=self.tol)
        self.memberships_ = res.memberships
        self.cluster_centers_ = res.centroids
        self.labels_ = np.argmax(res.memberships, axis=1)
        self.objective_ = res.objective
        self.assignment_ = res
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_matrix(X, n_features=self.cluster_centers_.shape[1])
        return _fcm_memberships(_sq_distances(X, self.cluster_centers_), self.m)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)
