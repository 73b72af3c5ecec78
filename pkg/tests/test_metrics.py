import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

from conftest import aircraft_rows
from dartvae.clustering import HardAssignment, _centroids, fuzzy_cmeans
from dartvae.metrics import (
    EvaluationReport,
    calinski_harabasz,
    davies_bouldin,
    evaluate,
    fpc,
    fpe,
    fuzzy_silhouette,
    mean_membership,
    silhouette,
    silhouette_samples,
)

PAIRS = np.array([[0.0], [0.1], [10.0], [10.1]])
PAIR_LABELS = np.array([0, 0, 1, 1])


def random_instance(seed, n, k):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 3))
    labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    return X, rng.permutation(labels)


def db_oracle(X, labels):
    ks = sorted(set(labels.tolist()))
    C = {c: X[labels == c].mean(axis=0) for c in ks}
    S = {c: np.mean([np.linalg.norm(x - C[c]) for x in X[labels == c]]) for c in ks}
    return np.mean([max((S[i] + S[j]) / np.linalg.norm(C[i] - C[j]) for j in ks if j != i) for i in ks])


def fs_oracle(X, U):
    """Weighted silhouette computed with explicit loops."""
    n, k = U.shape
    labels = [max(range(k), key=lambda c: (U[i, c], -c)) for i in range(n)]
    num = den = 0.0
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            s = 0.0
        else:
            a = sum(np.linalg.norm(X[i] - X[j]) for j in own) / len(own)
            b = min(
                sum(np.linalg.norm(X[i] - X[j]) for j in range(n) if labels[j] == c)
                / sum(1 for j in range(n) if labels[j] == c)
                for c in set(labels) if c != labels[i]
            )
            s = (b - a) / max(a, b)
        top = sorted(U[i])[-2:]
        w = top[1] - top[0]
        num += w * s
        den += w
    return num / den


class TestHardMetrics:
    def test_tight_pairs_silhouette(self):
        expected = np.mean([9.95 / 10.05, 9.85 / 9.95])
        assert silhouette(PAIRS, PAIR_LABELS) == pytest.approx(expected, abs=1e-12)
        assert silhouette(PAIRS, PAIR_LABELS) == pytest.approx(0.99, abs=0.005)

    def test_tight_pairs_db(self):
        assert davies_bouldin(PAIRS, PAIR_LABELS) == pytest.approx(0.01, abs=1e-12)

    def test_tight_pairs_ch(self):
        # centroids 0.05 and 10.05 around the grand mean 5.05
        B = 2 * 5.0**2 + 2 * 5.0**2
        W = 4 * 0.05**2
        assert calinski_harabasz(PAIRS, PAIR_LABELS) == pytest.approx((B / 1) / (W / 2), rel=1e-9)
        assert calinski_harabasz(PAIRS, PAIR_LABELS) == pytest.approx(20000.0, rel=1e-9)

    def test_duplicates_split(self):
        assert silhouette(np.zeros((4, 2)), np.array([0, 0, 1, 1])) <= 0

    def test_singletons(self):
        assert silhouette(np.array([[0.0], [1.0], [5.0]]), np.array([0, 1, 2])) == 0.0
        assert davies_bouldin(np.array([[0.0], [1.0]]), np.array([0, 1])) == 0.0

    def test_db_coincident_centroids(self):
        X = np.array([[-1.0], [1.0], [-2.0], [2.0]])
        with pytest.raises(ValueError, match="0 and 1"):
            davies_bouldin(X, np.array([0, 0, 1, 1]))

    def test_ch_zero_within(self):
        assert calinski_harabasz(np.array([[0.0], [0.0], [1.0], [1.0]]), np.array([0, 0, 1, 1])) == math.inf

    def test_one_cluster_rejected(self):
        with pytest.raises(ValueError):
            silhouette(PAIRS, np.zeros(4, dtype=int))

    def test_ch_random_labels_near_one(self):
        values = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((200, 2))
            values.append(calinski_harabasz(X, rng.integers(0, 3, 200)))
        assert 1 / 3 < np.mean(values) < 3

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(5, 50), st.integers(2, 4))
    def test_against_sklearn(self, seed, n, k):
        X, labels = random_instance(seed, n, k)
        assert silhouette(X, labels) == pytest.approx(skm.silhouette_score(X, labels), abs=1e-10)
        # sklearn's centroid distances use the expanded |a|^2+|b|^2-2ab form, good to ~1e-8
        assert davies_bouldin(X, labels) == pytest.approx(skm.davies_bouldin_score(X, labels), rel=1e-7)
        assert davies_bouldin(X, labels) == pytest.approx(db_oracle(X, labels), rel=1e-12)
        assert calinski_harabasz(X, labels) == pytest.approx(skm.calinski_harabasz_score(X, labels), rel=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(5, 50), st.integers(2, 4), st.floats(0.01, 100))
    def test_bounds_scale_and_permutation(self, seed, n, k, scale):
        X, labels = random_instance(seed, n, k)
        ss, db, ch = silhouette(X, labels), davies_bouldin(X, labels), calinski_harabasz(X, labels)
        assert -1 <= ss <= 1 and db >= 0 and ch >= 0
        assert silhouette(scale * X, labels) == pytest.approx(ss, abs=1e-9)
        assert davies_bouldin(scale * X, labels) == pytest.approx(db, rel=1e-9)
        assert calinski_harabasz(scale * X, labels) == pytest.approx(ch, rel=1e-9)
        perm = np.random.default_rng(seed).permutation(k)[labels]
        assert silhouette(X, perm) == pytest.approx(ss, abs=1e-12)
        assert davies_bouldin(X, perm) == pytest.approx(db, rel=1e-12)
        assert calinski_harabasz(X, perm) == pytest.approx(ch, rel=1e-12)


class TestSoftMetrics:
    def test_crisp(self):
        U = np.eye(3)[[0, 1, 2, 2]]
        assert (fpc(U), fpe(U), mean_membership(U)) == (1.0, 0.0, 1.0)

    def test_uniform(self):
        U = np.full((5, 4), 0.25)
        assert fpc(U) == 0.25 and mean_membership(U) == 0.25
        assert fpe(U) == pytest.approx(math.log(4), abs=1e-15)

    def test_ninety_ten(self):
        U = np.tile([0.9, 0.1], (6, 1))
        assert fpc(U) == pytest.approx(0.82, abs=1e-15) and mean_membership(U) == 0.9

    def test_bad_rows(self):
        with pytest.raises(ValueError):
            fpc(np.array([[0.5, 0.6]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 30), st.integers(2, 5))
    def test_bounds(self, seed, n, k):
        U = np.random.default_rng(seed).dirichlet(np.ones(k), n)
        assert 1 / k - 1e-12 <= fpc(U) <= 1 + 1e-12
        assert -1e-12 <= fpe(U) <= math.log(k) + 1e-12
        assert 1 / k - 1e-12 <= mean_membership(U) <= 1 + 1e-12
        perm = U[:, np.random.default_rng(seed).permutation(k)]
        assert fpc(perm) == pytest.approx(fpc(U)) and fpe(perm) == pytest.approx(fpe(U))

    def test_fs_crisp_equals_silhouette(self):
        assert fuzzy_silhouette(PAIRS, np.eye(2)[PAIR_LABELS]) == silhouette(PAIRS, PAIR_LABELS)

    def test_fs_uniform_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            fuzzy_silhouette(PAIRS, np.full((4, 2), 0.5))

    def test_fs_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        X = np.vstack([rng.normal(0, 0.5, (8, 2)), rng.normal(3, 0.5, (8, 2))])
        U = fuzzy_cmeans(X, 2, seed=0).memberships
        assert fuzzy_silhouette(X, U) == pytest.approx(fs_oracle(X, U), abs=1e-10)

    def test_silhouette_samples_against_sklearn(self):
        X, labels = random_instance(0, 30, 3)
        np.testing.assert_allclose(silhouette_samples(X, labels), skm.silhouette_samples(X, labels), atol=1e-12)


class TestEvaluate:
    def fixture(self, aircraft):
        A = aircraft_rows(aircraft.schema, is_uav=[0, 0, 1, 1], is_stealth=[1, 0, 0, 0])
        return A

    def test_hard_only(self, aircraft):
        A = self.fixture(aircraft)
        report = evaluate(PAIRS, HardAssignment(PAIR_LABELS, _centroids(PAIRS, PAIR_LABELS, 2)), aircraft, A,
                          metadata={"config_id": "x"})
        assert report.soft is None and "soft" not in report.to_dict()
        assert report.hard["davies_bouldin"] == pytest.approx(0.01)
        assert report.violations["counts"]["stealth_consistency"] == 1
        assert report.metadata == {"config_id": "x", "k": 2}

    def test_soft_has_both_blocks(self, aircraft):
        soft = fuzzy_cmeans(PAIRS, 2, seed=0)
        report = evaluate(PAIRS, soft, aircraft, self.fixture(aircraft))
        assert set(report.soft) == {"fpc", "fpe", "mean_membership", "fuzzy_silhouette"}
        assert report.hard["silhouette"] == pytest.approx(silhouette(PAIRS, PAIR_LABELS))

    def test_json_round_trip(self, aircraft):
        report = evaluate(PAIRS, fuzzy_cmeans(PAIRS, 2, seed=0), aircraft, self.fixture(aircraft),
                          metadata={"seed": 1})
        back = EvaluationReport.from_json(report.to_json())
        assert back == report and back.to_json() == report.to_json()

    def test_summary_row_order(self, aircraft):
        report = evaluate(PAIRS, HardAssignment(PAIR_LABELS, _centroids(PAIRS, PAIR_LABELS, 2)), aircraft,
                          self.fixture(aircraft))
        row = report.summary_row()
        assert list(row)[:4] == ["config_id", "method", "k", "seed"]
        assert list(row)[-1] == "violations.total"

    def test_unsupported_assignment(self, aircraft):
        with pytest.raises(TypeError):
            evaluate(PAIRS, PAIR_LABELS, aircraft, self.fixture(aircraft))
