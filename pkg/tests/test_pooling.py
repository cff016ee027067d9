import itertools

import numpy as np
import pytest

from tokpool.errors import DataError, UsageError
from tokpool.pooling import (
    ClusterResult,
    PoolSpec,
    chamfer_loss,
    grid_pool,
    importance_select,
    random_select,
    token_pool,
)
from tokpool.transformer import TokenSet


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def partitions_up_to_k(n, k):
    """All set partitions of range(n) into at most k nonempty blocks."""

    def rec(i, blocks):
        if i == n:
            yield [list(b) for b in blocks]
            return
        for b in blocks:
            b.append(i)
            yield from rec(i + 1, blocks)
            b.pop()
        if len(blocks) < k:
            blocks.append([i])
            yield from rec(i + 1, blocks)
            blocks.pop()

    yield from rec(0, [])


def best_partition_loss(points, k):
    """Global k-means optimum: best sum of within-block squared deviations."""
    best = np.inf
    for blocks in partitions_up_to_k(len(points), k):
        loss = 0.0
        for b in blocks:
            sub = points[b]
            loss += ((sub - sub.mean(axis=0)) ** 2).sum()
        best = min(best, loss)
    return best


def best_medoid_loss(points, k):
    """Global k-medoids optimum by enumerating every size-k medoid set."""
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    best = np.inf
    for subset in itertools.combinations(range(len(points)), k):
        best = min(best, d2[:, subset].min(axis=1).sum())
    return best


def blob_tokens():
    return TokenSet(np.array([[0.0], [0.1], [10.0], [10.1]]))


# ---------------------------------------------------------------------------
# chamfer loss
# ---------------------------------------------------------------------------


class TestChamferLoss:
    def test_zero_when_identical(self):
        f = np.random.default_rng(0).normal(size=(6, 3))
        assert chamfer_loss(f, f) == 0.0

    def test_hand_value(self):
        f = np.array([[1.0], [2.0], [3.0]])
        assert chamfer_loss(f, np.array([[2.0]])) == pytest.approx(2.0, abs=1e-12)

    def test_weighted_hand_value(self):
        f = np.array([[1.0], [2.0], [3.0]])
        loss = chamfer_loss(f, np.array([[2.0]]), weights=[1.0, 2.0, 3.0])
        assert loss == pytest.approx(4.0, abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            chamfer_loss(np.zeros((2, 2)), np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# clustering methods
# ---------------------------------------------------------------------------


class TestKMeans:
    def test_two_blob_fixture(self):
        out, res = token_pool(blob_tokens(), PoolSpec("kmeans", 2, protect_first=False))
        np.testing.assert_allclose(
            np.sort(out.features.ravel()), [0.05, 10.05], rtol=0, atol=1e-12
        )
        assert res.loss == pytest.approx(0.01, rel=1e-9)
        assert res.assignment.tolist() == [0, 0, 1, 1]

    def test_identity_when_k_covers_all(self):
        f = TokenSet(np.random.default_rng(1).normal(size=(6, 3)))
        out, res = token_pool(f, PoolSpec("kmeans", 6, protect_first=False))
        np.testing.assert_array_equal(out.features, f.features)
        assert res.loss == 0.0 and res.iterations == 0
        out, res = token_pool(f, PoolSpec("kmeans", 999, protect_first=False))
        np.testing.assert_array_equal(out.features, f.features)

    def test_loss_never_beats_exhaustive_optimum(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(4, 9))
            k = int(rng.integers(1, 4))
            pts = rng.normal(size=(n, 2))
            _, res = token_pool(TokenSet(pts), PoolSpec("kmeans", k, protect_first=False))
            assert res.loss >= best_partition_loss(pts, k) - 1e-12

    def test_loss_monotone_in_iterations(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(12, 3))
        losses = [
            token_pool(
                TokenSet(pts), PoolSpec("kmeans", 3, max_iters=t, protect_first=False)
            )[1].loss
            for t in range(1, 8)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_empty_cluster_repair(self):
        # duplicate init centers desert cluster 1; it must be repaired
        pts = np.array([[5.0], [5.0], [0.0], [10.0]])
        out, res = token_pool(TokenSet(pts), PoolSpec("kmeans", 2, protect_first=False))
        assert np.bincount(res.assignment, minlength=2).min() > 0
        assert np.isfinite(res.loss)

    @pytest.mark.parametrize("method", ["kmeans", "kmedoids", "wkmeans", "wkmedoids"])
    @pytest.mark.parametrize("init", ["topk_weight", "random"])
    def test_no_empty_clusters_on_duplicate_heavy_data(self, method, init):
        # integer-valued tokens produce exact ties and deserted clusters; as
        # long as there are >= k distinct values every cluster must end occupied
        rng = np.random.default_rng(42)
        for trial in range(20):
            pts = rng.integers(0, 3, size=(15, 2)).astype(float)
            k = 3
            if len(np.unique(pts, axis=0)) < k:
                continue
            w = 0.1 + rng.random(15) if method.startswith("w") else None
            _, res = token_pool(
                TokenSet(pts, weights=w),
                PoolSpec(method, k, init=init, seed=trial, protect_first=False),
            )
            assert np.bincount(res.assignment, minlength=k).min() > 0

    def test_output_count(self):
        f = TokenSet(np.random.default_rng(4).normal(size=(9, 2)))
        out, _ = token_pool(f, PoolSpec("kmeans", 4, protect_first=False))
        assert out.n_tokens == 4
        out, _ = token_pool(f, PoolSpec("kmeans", 4, protect_first=True))
        assert out.n_tokens == 5


class TestKMedoids:
    def test_two_blob_fixture_lowest_index_tie_break(self):
        out, res = token_pool(blob_tokens(), PoolSpec("kmedoids", 2, protect_first=False))
        np.testing.assert_array_equal(np.sort(out.features.ravel()), [0.0, 10.0])
        assert res.loss == pytest.approx(0.02, rel=1e-9)
        assert res.medoid_indices.tolist() == [0, 2]

    def test_medoids_are_input_rows_bit_exact(self):
        rng = np.random.default_rng(5)
        for seed in range(5):
            pts = rng.normal(size=(10, 4))
            out, res = token_pool(
                TokenSet(pts), PoolSpec("kmedoids", 3, protect_first=False)
            )
            for row in out.features:
                assert any((row == pts[i]).all() for i in range(10))
            np.testing.assert_array_equal(out.features, pts[res.medoid_indices])

    def test_loss_never_beats_exhaustive_optimum(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            n = int(rng.integers(4, 9))
            k = int(rng.integers(1, 4))
            pts = rng.normal(size=(n, 2))
            _, res = token_pool(TokenSet(pts), PoolSpec("kmedoids", k, protect_first=False))
            assert res.loss >= best_medoid_loss(pts, k) - 1e-12

    def test_loss_monotone_in_iterations(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(12, 3))
        losses = [
            token_pool(
                TokenSet(pts), PoolSpec("kmedoids", 3, max_iters=t, protect_first=False)
            )[1].loss
            for t in range(1, 8)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


class TestWeightedVariants:
    @pytest.mark.parametrize("pair", [("wkmeans", "kmeans"), ("wkmedoids", "kmedoids")])
    def test_uniform_weights_reduce_to_unweighted(self, pair):
        weighted, plain = pair
        rng = np.random.default_rng(8)
        for seed in range(5):
            pts = rng.normal(size=(10, 3))
            f_w = TokenSet(pts, weights=np.ones(10))
            f_p = TokenSet(pts)
            out_w, res_w = token_pool(f_w, PoolSpec(weighted, 3, protect_first=False))
            out_p, res_p = token_pool(f_p, PoolSpec(plain, 3, protect_first=False))
            np.testing.assert_array_equal(out_w.features, out_p.features)
            np.testing.assert_array_equal(res_w.assignment, res_p.assignment)
            assert res_w.loss == res_p.loss

    def test_weights_pull_centers(self):
        # heavy token dominates its cluster mean: cluster {1, 10} lands at
        # (100*1 + 1*10) / 101 instead of the unweighted 5.5
        pts = np.array([[0.0], [1.0], [10.0]])
        f = TokenSet(pts, weights=np.array([1.0, 100.0, 1.0]))
        out, res = token_pool(f, PoolSpec("wkmeans", 2, protect_first=False))
        heavy_cluster = res.assignment[1]
        center = res.centers[heavy_cluster][0]
        assert center == pytest.approx(110.0 / 101.0, rel=1e-12)

    def test_weighted_requires_weights(self):
        f = TokenSet(np.ones((4, 2)))
        with pytest.raises(UsageError):
            token_pool(f, PoolSpec("wkmeans", 2, protect_first=False))

    def test_weighted_loss_reported_weighted(self):
        pts = np.array([[0.0], [1.0], [2.0], [3.0]])
        w = np.array([1.0, 2.0, 3.0, 4.0])
        _, res = token_pool(
            TokenSet(pts, weights=w), PoolSpec("wkmeans", 2, protect_first=False)
        )
        assert res.loss == pytest.approx(
            chamfer_loss(pts, res.centers, weights=w), rel=1e-12
        )


class TestInitAndDeterminism:
    def test_topk_init_uses_weights(self):
        pts = np.array([[0.0], [1.0], [2.0], [3.0]])
        w = np.array([1.0, 9.0, 1.0, 8.0])
        _, res = token_pool(
            TokenSet(pts, weights=w),
            PoolSpec("wkmedoids", 2, max_iters=1, protect_first=False),
        )
        assert set(res.medoid_indices.tolist()) <= {0, 1, 2, 3}

    def test_random_init_seed_determinism(self):
        pts = np.random.default_rng(9).normal(size=(12, 3))
        a = token_pool(
            TokenSet(pts), PoolSpec("kmeans", 3, init="random", seed=5, protect_first=False)
        )
        b = token_pool(
            TokenSet(pts), PoolSpec("kmeans", 3, init="random", seed=5, protect_first=False)
        )
        np.testing.assert_array_equal(a[0].features, b[0].features)
        np.testing.assert_array_equal(a[1].assignment, b[1].assignment)

    def test_permutation_equivariance_with_distinct_weights(self):
        rng = np.random.default_rng(10)
        pts = rng.normal(size=(8, 2))
        w = 1.0 + rng.permutation(8).astype(float)  # distinct
        perm = rng.permutation(8)
        base = token_pool(
            TokenSet(pts, weights=w), PoolSpec("wkmeans", 3, protect_first=False)
        )[1]
        permuted = token_pool(
            TokenSet(pts[perm], weights=w[perm]), PoolSpec("wkmeans", 3, protect_first=False)
        )[1]
        # permuted token j is original token perm[j]; the center each token
        # lands on must agree regardless of cluster numbering
        np.testing.assert_allclose(
            permuted.centers[permuted.assignment],
            base.centers[base.assignment][perm],
            rtol=0,
            atol=1e-9,
        )


class TestProtectFirst:
    def test_protected_row_untouched(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(9, 3))
        out, res = token_pool(TokenSet(pts), PoolSpec("kmeans", 3, protect_first=True))
        np.testing.assert_array_equal(out.features[0], pts[0])
        assert out.n_tokens == 4
        assert res.assignment.shape == (8,)

    def test_protected_excluded_from_loss(self):
        pts = np.vstack([[100.0], np.zeros((4, 1))])
        _, res = token_pool(TokenSet(pts), PoolSpec("kmeans", 1, protect_first=True))
        assert res.loss == pytest.approx(0.0, abs=1e-12)

    def test_identity_counts_protected(self):
        pts = np.random.default_rng(12).normal(size=(5, 2))
        out, _ = token_pool(TokenSet(pts), PoolSpec("kmeans", 4, protect_first=True))
        np.testing.assert_array_equal(out.features, pts)


class TestCarryCounts:
    def test_counts_are_cluster_sizes(self):
        out, res = token_pool(
            blob_tokens(), PoolSpec("kmeans", 2, protect_first=False, emit_counts=True)
        )
        assert res.counts.tolist() == [2.0, 2.0]
        np.testing.assert_array_equal(out.counts, [2.0, 2.0])

    def test_counts_accumulate_input_multiplicities(self):
        f = TokenSet(blob_tokens().features, counts=np.array([1.0, 2.0, 3.0, 4.0]))
        _, res = token_pool(f, PoolSpec("kmeans", 2, protect_first=False, emit_counts=True))
        assert res.counts.tolist() == [3.0, 7.0]

    def test_no_counts_without_flag(self):
        out, _ = token_pool(blob_tokens(), PoolSpec("kmeans", 2, protect_first=False))
        assert out.counts is None


class TestRandomSelect:
    def test_k_equals_n_returns_all(self):
        f = TokenSet(np.random.default_rng(13).normal(size=(5, 2)))
        out = random_select(f, 5, seed=1, protect_first=False)
        np.testing.assert_array_equal(out.features, f.features)

    def test_seed_determinism(self):
        f = TokenSet(np.random.default_rng(14).normal(size=(8, 2)))
        a = random_select(f, 3, seed=2, protect_first=False)
        b = random_select(f, 3, seed=2, protect_first=False)
        np.testing.assert_array_equal(a.features, b.features)

    def test_survivors_keep_input_order(self):
        pts = np.arange(10, dtype=float).reshape(-1, 1)
        out = random_select(TokenSet(pts), 4, seed=3, protect_first=False)
        vals = out.features.ravel()
        assert (np.diff(vals) > 0).all()

    def test_uniform_frequencies(self):
        pts = np.arange(4, dtype=float).reshape(-1, 1)
        f = TokenSet(pts)
        counts = np.zeros(4)
        for seed in range(20_000):
            out = random_select(f, 1, seed=seed, protect_first=False)
            counts[int(out.features[0, 0])] += 1
        sigma = np.sqrt(20_000 * 0.25 * 0.75)
        assert (np.abs(counts - 5_000) < 4 * sigma).all()

    def test_k_too_large(self):
        f = TokenSet(np.ones((3, 2)))
        with pytest.raises(UsageError):
            random_select(f, 4, seed=0, protect_first=False)
        with pytest.raises(UsageError):
            random_select(f, 3, seed=0, protect_first=True)


class TestImportanceSelect:
    def test_one_hot_scores(self):
        pts = np.arange(4, dtype=float).reshape(-1, 1)
        out = importance_select(
            TokenSet(pts), [0.0, 0.0, 1.0, 0.0], 1, seed=0, protect_first=False
        )
        assert out.features.tolist() == [[2.0]]

    def test_k_equals_n(self):
        f = TokenSet(np.random.default_rng(15).normal(size=(4, 2)))
        out = importance_select(f, np.ones(4), 4, seed=0, protect_first=False)
        np.testing.assert_array_equal(out.features, f.features)

    def test_zero_scores_rejected(self):
        f = TokenSet(np.ones((3, 2)))
        with pytest.raises(DataError):
            importance_select(f, np.zeros(3), 1, seed=0, protect_first=False)

    def test_uniform_scores_match_random_distribution(self):
        # chi-square between importance(uniform) and the exact uniform law
        pts = np.arange(4, dtype=float).reshape(-1, 1)
        f = TokenSet(pts)
        counts = np.zeros(4)
        trials = 20_000
        for seed in range(trials):
            out = importance_select(f, np.ones(4), 1, seed=seed, protect_first=False)
            counts[int(out.features[0, 0])] += 1
        expected = trials / 4
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert chi2 < 16.27  # chi2 0.999 quantile, 3 dof

    def test_high_scores_win_more_often(self):
        pts = np.arange(3, dtype=float).reshape(-1, 1)
        f = TokenSet(pts)
        scores = np.array([1.0, 1.0, 8.0])
        wins = 0
        for seed in range(2_000):
            out = importance_select(f, scores, 1, seed=seed, protect_first=False)
            wins += int(out.features[0, 0] == 2.0)
        assert wins > 1_400  # expected 1600


class TestGridPool:
    def test_constant_tokens(self):
        f = TokenSet(np.ones((4, 3)), grid=(2, 2))
        out = grid_pool(f)
        np.testing.assert_array_equal(out.features, np.ones((1, 3)))
        assert out.grid == (1, 1)

    def test_hand_mean(self):
        f = TokenSet(np.array([[0.0], [1.0], [2.0], [3.0]]), grid=(2, 2))
        out = grid_pool(f)
        assert out.features.tolist() == [[1.5]]

    def test_odd_grid_rejected(self):
        f = TokenSet(np.ones((9, 2)), grid=(3, 3))
        with pytest.raises(UsageError):
            grid_pool(f)

    def test_missing_grid_rejected(self):
        with pytest.raises(UsageError):
            grid_pool(TokenSet(np.ones((4, 2))))

    def test_cls_token_passes_through(self):
        feats = np.vstack([[9.0], np.arange(16, dtype=float).reshape(-1, 1)])
        f = TokenSet(feats, grid=(4, 4))
        out = grid_pool(f)
        assert out.features[0, 0] == 9.0
        assert out.n_tokens == 5
        assert out.grid == (2, 2)

    def test_block_means_row_major(self):
        feats = np.arange(16, dtype=float).reshape(-1, 1)
        out = grid_pool(TokenSet(feats, grid=(4, 4)))
        np.testing.assert_array_equal(out.features.ravel(), [2.5, 4.5, 10.5, 12.5])

    def test_via_token_pool(self):
        f = TokenSet(np.arange(4, dtype=float).reshape(-1, 1), grid=(2, 2))
        out, res = token_pool(f, PoolSpec("grid", 1, protect_first=False))
        assert out.features.tolist() == [[1.5]]
        assert res.assignment.tolist() == [0, 0, 0, 0]
        assert res.counts.tolist() == [4.0]


class TestSpecValidation:
    def test_bad_method(self):
        with pytest.raises(UsageError):
            PoolSpec("meanshift", 2)

    def test_bad_k(self):
        with pytest.raises(UsageError):
            PoolSpec("kmeans", 0)

    def test_bad_init(self):
        with pytest.raises(UsageError):
            PoolSpec("kmeans", 2, init="kpp")
