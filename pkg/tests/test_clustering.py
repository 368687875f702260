import numpy as np
import pytest

from ecgfcn.clustering import (ClusteringResult, DistanceMatrix, dtw_distance,
                               kmedoids, pairwise_dtw_matrix, select_k,
                               select_k_from_matrix, silhouette,
                               silhouette_samples, write_cluster_report_csv)

from oracles import dtw_exhaustive, kmedoids_exhaustive, silhouette_reference


def blob_distance_matrix(sizes, within=0.5, between=50.0):
    """Block matrix: small distances inside each blob, large across."""
    n = sum(sizes)
    d = np.full((n, n), between)
    start = 0
    for s in sizes:
        d[start:start + s, start:start + s] = within
        start += s
    np.fill_diagonal(d, 0.0)
    return d


class TestDtw:
    def test_identity_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(size=(12, 3))
            assert dtw_distance(x, x) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(9, 2)), rng.normal(size=(13, 2))
        assert np.isclose(dtw_distance(a, b), dtw_distance(b, a))

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            a, b = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
            assert dtw_distance(a, b) >= 0

    def test_shift_absorbed(self):
        a = np.array([0.0, 0.0, 1.0, 0.0])
        b = np.array([0.0, 1.0, 0.0, 0.0])
        assert dtw_distance(a, b) == 0.0

    def test_diagonal_only_path(self):
        assert dtw_distance(np.array([0.0, 0.0]), np.array([1.0, 1.0])) == 2.0

    def test_never_worse_than_rigid_alignment(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a, b = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
            rigid = float(((a - b) ** 2).sum())
            assert dtw_distance(a, b) <= rigid + 1e-12

    def test_matches_exhaustive_path_search(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = rng.normal(size=(4, 2))
            b = rng.normal(size=(5, 2))
            assert np.isclose(dtw_distance(a, b), dtw_exhaustive(a, b))

    def test_unequal_lengths_allowed(self):
        a = np.zeros((5, 2))
        b = np.zeros((9, 2))
        assert dtw_distance(a, b) == 0.0

    def test_lead_mismatch_rejected(self):
        with pytest.raises(ValueError, match="lead"):
            dtw_distance(np.zeros((4, 2)), np.zeros((4, 3)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            dtw_distance(np.zeros((0, 2)), np.zeros((4, 2)))


class TestDistanceMatrix:
    def test_validation(self):
        with pytest.raises(ValueError, match="symmetric"):
            DistanceMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
        with pytest.raises(ValueError, match="diagonal"):
            DistanceMatrix(np.array([[0.5, 1.0], [1.0, 0.0]]))
        with pytest.raises(ValueError, match="non-negative"):
            DistanceMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))

    def test_pairwise_consistent_under_permutation(self):
        rng = np.random.default_rng(5)
        items = [rng.normal(size=(6, 2)) for _ in range(5)]
        d = pairwise_dtw_matrix(items).values
        perm = [3, 1, 4, 0, 2]
        d2 = pairwise_dtw_matrix([items[i] for i in perm]).values
        assert np.allclose(d2, d[np.ix_(perm, perm)])


class TestKmedoids:
    def test_k1_is_row_sum_argmin(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(7, 2))
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        res = kmedoids(d, 1, seed=0)
        assert res.medoids[0] == d.sum(axis=1).argmin()
        assert np.isclose(res.cost, d[res.medoids[0]].sum())

    def test_two_blobs_recovered_exactly(self):
        d = blob_distance_matrix([4, 4], within=0.5, between=100.0)
        res = kmedoids(d, 2, seed=1)
        blobs = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        same = (res.assignment[:, None] == res.assignment[None]) \
            == (blobs[:, None] == blobs[None])
        assert same.all()

    def test_matches_exhaustive_optimum_on_small_sets(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            pts = rng.normal(size=(8, 2))
            d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
            np.fill_diagonal(d, 0.0)
            d = (d + d.T) / 2
            best_cost, _, _ = kmedoids_exhaustive(d, 2)
            res = kmedoids(d, 2, seed=trial)
            assert res.cost <= best_cost * 1.2 + 1e-9  # greedy start, near-optimal
            assert res.cost >= best_cost - 1e-9

    def test_k_equals_n(self):
        d = blob_distance_matrix([3, 3])
        res = kmedoids(d, 6, seed=0)
        assert res.cost == 0.0
        assert sorted(res.medoids.tolist()) == list(range(6))

    def test_k_out_of_range(self):
        d = blob_distance_matrix([2, 2])
        with pytest.raises(ValueError, match="k must be"):
            kmedoids(d, 5, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(10, 3))
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        np.fill_diagonal(d, 0.0)
        d = (d + d.T) / 2
        a = kmedoids(d, 3, seed=9)
        b = kmedoids(d, 3, seed=9)
        assert np.array_equal(a.medoids, b.medoids)
        assert np.array_equal(a.assignment, b.assignment)

    def test_medoids_belong_to_their_clusters(self):
        d = blob_distance_matrix([3, 4, 5], within=1.0, between=30.0)
        res = kmedoids(d, 3, seed=2)
        for ci, m in enumerate(res.medoids):
            assert res.assignment[m] == ci


class TestSilhouette:
    def test_perfect_pairs(self):
        d = blob_distance_matrix([2, 2], within=0.0, between=10.0)
        assert silhouette(d, np.array([0, 0, 1, 1])) == 1.0

    def test_all_equal_distances(self):
        d = np.full((4, 4), 3.0)
        np.fill_diagonal(d, 0.0)
        assert silhouette(d, np.array([0, 0, 1, 1])) == 0.0

    def test_hand_case_two_thirds(self):
        d = blob_distance_matrix([2, 2], within=1.0, between=3.0)
        assert np.isclose(silhouette(d, np.array([0, 0, 1, 1])), 2 / 3)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            pts = rng.normal(size=(9, 2))
            d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
            np.fill_diagonal(d, 0.0)
            d = (d + d.T) / 2
            assign = rng.integers(0, 3, 9)
            if len(np.unique(assign)) < 2:
                continue
            assert np.isclose(silhouette(d, assign),
                              silhouette_reference(d, assign))

    def test_range(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            pts = rng.normal(size=(8, 2))
            d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
            np.fill_diagonal(d, 0.0)
            d = (d + d.T) / 2
            assign = rng.integers(0, 2, 8)
            if len(np.unique(assign)) < 2:
                continue
            s = silhouette(d, assign)
            assert -1.0 <= s <= 1.0

    def test_singletons_score_zero(self):
        d = blob_distance_matrix([1, 3], within=1.0, between=5.0)
        samples = silhouette_samples(d, np.array([0, 1, 1, 1]))
        assert samples[0] == 0.0

    def test_single_cluster_rejected(self):
        d = blob_distance_matrix([4])
        with pytest.raises(ValueError, match="two clusters"):
            silhouette(d, np.zeros(4, dtype=int))


class TestSelectK:
    def test_recovers_three_blobs(self):
        d = blob_distance_matrix([5, 5, 5], within=1.0, between=40.0)
        res = select_k_from_matrix(d, (2, 3, 4), seed=0)
        assert res.k == 3

    def test_recovers_two_blobs(self):
        d = blob_distance_matrix([6, 6], within=1.0, between=40.0)
        res = select_k_from_matrix(d, (2, 3, 4), seed=0)
        assert res.k == 2

    def test_recovers_four_blobs(self):
        d = blob_distance_matrix([4, 4, 4, 4], within=1.0, between=40.0)
        res = select_k_from_matrix(d, (2, 3, 4), seed=0)
        assert res.k == 4

    def test_tie_prefers_smaller_k(self):
        d = np.full((8, 8), 2.0)  # fully symmetric: silhouette 0 for every k
        np.fill_diagonal(d, 0.0)
        res = select_k_from_matrix(d, (2, 3, 4), seed=0)
        assert res.k == 2

    def test_too_few_samples(self):
        d = blob_distance_matrix([2, 2])
        with pytest.raises(ValueError, match="at least 5"):
            select_k_from_matrix(d, (2, 3, 4), seed=0)

    def test_end_to_end_on_signals(self):
        # three waveform families distinguished by shape, shifted in time
        rng = np.random.default_rng(11)
        t = np.arange(30, dtype=np.float64)
        items = []
        for kind in range(3):
            for _ in range(5):
                shift = rng.integers(-3, 4)
                center = 10.0 + kind * 5 + shift
                width = 3.0 + 2 * kind
                wave = np.exp(-0.5 * ((t - center) / width) ** 2) * (1 + kind)
                items.append(wave[:, None] + rng.normal(0, 0.01, (30, 1)))
        res = select_k(items, (2, 3, 4), seed=0)
        assert res.k == 3

    def test_choice_is_exhaustively_best(self):
        d = blob_distance_matrix([5, 5, 5], within=1.0, between=40.0)
        res = select_k_from_matrix(d, (2, 3, 4), seed=0)
        others = [kmedoids(d, k, seed=0).silhouette for k in (2, 3, 4)]
        assert np.isclose(res.silhouette, max(others))


class TestReport:
    def test_report_contents(self, tmp_path):
        d = blob_distance_matrix([3, 3], within=1.0, between=20.0)
        res = kmedoids(d, 2, seed=0)
        path = tmp_path / "r.csv"
        write_cluster_report_csv(res, d, path, sample_ids=np.arange(10, 16))
        lines = path.read_text().splitlines()
        assert lines[0] == "sample,cluster,is_medoid,silhouette"
        assert len(lines) == 7
        assert sum(int(l.split(",")[2]) for l in lines[1:]) == 2
        summary = (tmp_path / "r.csv.summary").read_text()
        assert "k=2" in summary
