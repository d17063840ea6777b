import math

import numpy as np
import pytest

from arrqp import (
    QosMatrix,
    assemble_embedding,
    cosine_similarity,
    load_embedding,
    nmf_decompose,
    onehot_context,
    save_embedding,
    stat_feature_matrix,
    statistical_features,
)
from arrqp.data import ContextTable, DimensionError
from arrqp.features import nmf_objective

from conftest import random_masked_matrix


class TestStatisticalFeatures:
    def test_singleton(self):
        s = statistical_features(np.array([0.0, 3.0, 0.0]), np.array([False, True, False]))
        assert (s.min, s.max, s.mean, s.median, s.std) == (3, 3, 3, 3, 0)

    def test_hand_case(self):
        values = np.array([1.0, 2.0, 3.0, 10.0])
        s = statistical_features(values, np.ones(4, dtype=bool))
        assert s.min == 1
        assert s.max == 10
        assert s.mean == 4
        assert s.median == 2.5
        assert s.std == pytest.approx(math.sqrt(12.5), abs=1e-12)
        assert s.std == pytest.approx(3.5355, abs=1e-4)

    def test_cold_entity_all_zero(self):
        s = statistical_features(np.zeros(5), np.zeros(5, dtype=bool))
        assert s.as_array().tolist() == [0, 0, 0, 0, 0]

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            k = int(rng.integers(1, 25))
            values = rng.uniform(0.01, 50, size=k)
            mask = np.ones(k, dtype=bool)
            s = statistical_features(values, mask)
            obs = sorted(values)
            mean = sum(obs) / k
            var = sum((v - mean) ** 2 for v in obs) / k
            if k % 2:
                median = obs[k // 2]
            else:
                median = (obs[k // 2 - 1] + obs[k // 2]) / 2
            assert abs(s.min - obs[0]) < 1e-12
            assert abs(s.max - obs[-1]) < 1e-12
            assert abs(s.mean - mean) < 1e-12
            assert abs(s.median - median) < 1e-12
            assert abs(s.std - math.sqrt(var)) < 1e-12

    def test_matrix_layout(self):
        values = np.array([[1.0, 0.0], [2.0, 4.0]])
        matrix = QosMatrix(values=values, mask=values > 0)
        stats = stat_feature_matrix(matrix)
        assert stats.shape == (4, 5)
        assert stats[0].tolist() == [1, 1, 1, 1, 0]  # user 0
        assert stats[2][2] == 1.5  # service 0 mean over {1, 2}


class TestNmf:
    def test_rank_one_recovery(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(0.5, 2.0, size=8)
        v = rng.uniform(0.5, 2.0, size=11)
        values = np.outer(u, v)
        matrix = QosMatrix(values=values, mask=np.ones_like(values, dtype=bool))
        factors = nmf_decompose(matrix, d=1, max_iters=2000, tol=0.0, seed=1)
        recon = factors.user_factors @ factors.service_factors.T
        rmse = np.sqrt(((values - recon) ** 2).mean())
        assert rmse < 1e-3

    def test_objective_monotone(self):
        rng = np.random.default_rng(1)
        for seed in range(6):
            matrix = random_masked_matrix(rng, 10, 12, density=0.5)
            # track the objective across single iterations
            prev = None
            for iters in range(1, 12):
                f = nmf_decompose(matrix, d=3, max_iters=iters, tol=0.0, seed=seed)
                obj = nmf_objective(matrix, f.user_factors, f.service_factors)
                if prev is not None:
                    assert obj <= prev + 1e-9
                prev = obj

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        matrix = random_masked_matrix(rng, 9, 9, density=0.6)
        a = nmf_decompose(matrix, d=2, max_iters=50, seed=5)
        b = nmf_decompose(matrix, d=2, max_iters=50, seed=5)
        np.testing.assert_array_equal(a.user_factors, b.user_factors)
        np.testing.assert_array_equal(a.service_factors, b.service_factors)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        matrix = random_masked_matrix(rng, 7, 8, density=0.5)
        f = nmf_decompose(matrix, d=3, max_iters=100, seed=0)
        assert (f.user_factors >= 0).all()
        assert (f.service_factors >= 0).all()

    def test_empty_matrix_warns(self):
        matrix = QosMatrix(values=np.zeros((3, 3)), mask=np.zeros((3, 3), dtype=bool))
        with pytest.warns(UserWarning):
            f = nmf_decompose(matrix, d=2, seed=0)
        assert not f.user_factors.any()

    def test_cold_rows_get_zero_factors(self):
        values = np.array([[1.0, 2.0], [0.0, 0.0], [2.0, 1.0]])
        matrix = QosMatrix(values=values, mask=values > 0)
        f = nmf_decompose(matrix, d=2, max_iters=20, seed=0)
        assert not f.user_factors[1].any()

    def test_rank_bound(self):
        matrix = QosMatrix(values=np.ones((2, 5)), mask=np.ones((2, 5), dtype=bool))
        with pytest.raises(ValueError):
            nmf_decompose(matrix, d=3)


class TestCosineSimilarity:
    def test_identical_rows(self):
        values = np.array([[1.0, 2.0], [1.0, 2.0]])
        sim = cosine_similarity(QosMatrix(values=values, mask=values > 0), "user")
        assert sim[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_supports(self):
        values = np.array([[1.0, 0.0], [0.0, 2.0]])
        sim = cosine_similarity(QosMatrix(values=values, mask=values > 0), "user")
        assert sim[0, 1] == 0.0

    def test_collinear(self):
        values = np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]])
        sim = cosine_similarity(QosMatrix(values=values, mask=values > 0), "user")
        assert sim[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(4)
        matrix = random_masked_matrix(rng, 9, 14, density=0.5)
        for axis, count in (("user", 9), ("service", 14)):
            sim = cosine_similarity(matrix, axis)
            assert sim.shape == (count, count)
            np.testing.assert_allclose(sim, sim.T, atol=1e-12)
            live = matrix.mask.any(axis=1) if axis == "user" else matrix.mask.any(axis=0)
            for k in range(count):
                if live[k]:
                    assert sim[k, k] == pytest.approx(1.0, abs=1e-12)
                else:
                    assert sim[k, k] == 0.0

    def test_cold_row_all_zero(self):
        values = np.array([[0.0, 0.0], [1.0, 1.0]])
        sim = cosine_similarity(QosMatrix(values=values, mask=values > 0), "user")
        assert not sim[0].any()


class TestOnehot:
    def _context(self):
        return ContextTable(
            entity_kind="user",
            ids=("a", "b", "c"),
            region=np.array([2, 0, 1]),
            group=np.array([1, 1, 0]),
            n_regions=4,
            n_groups=2,
        )

    def test_width_and_blocks(self):
        onehot = onehot_context(self._context())
        assert onehot.shape == (3, 3 + 4 + 2)
        # region block of entity 0: index 2 of cardinality 4
        assert onehot[0, 3:7].tolist() == [0, 0, 1, 0]

    def test_each_block_sums_to_one(self):
        onehot = onehot_context(self._context())
        assert np.array_equal(onehot[:, :3].sum(axis=1), np.ones(3))
        assert np.array_equal(onehot[:, 3:7].sum(axis=1), np.ones(3))
        assert np.array_equal(onehot[:, 7:].sum(axis=1), np.ones(3))

    def test_benchmark_widths(self):
        # 339 users, 31 regions, 137 groups -> 507; 5825/74/2699 -> 8598
        assert 339 + 31 + 137 == 507
        user = ContextTable("user", tuple(map(str, range(339))),
                            np.zeros(339, int), np.zeros(339, int), 31, 137)
        assert onehot_context(user).shape[1] == 507
        service = ContextTable("service", tuple(map(str, range(5825))),
                               np.zeros(5825, int), np.zeros(5825, int), 74, 2699)
        assert service.onehot_width == 8598


class TestAssemble:
    def test_widths(self):
        n_rows = 7
        emb = assemble_embedding(
            np.ones((n_rows, 5)), np.ones((n_rows, 50)),
            np.ones((n_rows, 50)), np.ones((n_rows, 50)), n_users=3,
        )
        assert emb.width == 155
        assert emb.matrix.shape == (7, 155)
        assert emb.user_rows().shape == (3, 155)
        assert emb.service_rows().shape == (4, 155)

    def test_all_zero_inputs_stay_zero(self):
        emb = assemble_embedding(
            np.zeros((4, 5)), np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((4, 3)),
            n_users=2,
        )
        assert not emb.matrix.any()

    def test_minmax_scaling(self):
        rng = np.random.default_rng(6)
        emb = assemble_embedding(
            rng.normal(size=(6, 5)) * 10, rng.normal(size=(6, 2)),
            rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), n_users=3,
        )
        assert emb.matrix.min() >= 0.0
        assert emb.matrix.max() <= 1.0
        np.testing.assert_allclose(emb.matrix.min(axis=0), 0.0, atol=1e-15)
        np.testing.assert_allclose(emb.matrix.max(axis=0), 1.0, atol=1e-15)

    def test_block_slices(self):
        emb = assemble_embedding(
            np.full((4, 5), 1.0), np.full((4, 2), 2.0),
            np.full((4, 3), 3.0), np.full((4, 4), 4.0), n_users=2, scale=False,
        )
        assert emb.block("stat").shape == (4, 5)
        assert emb.block("collaborative").shape == (4, 2)
        assert emb.block("similarity").shape == (4, 3)
        assert emb.block("contextual").shape == (4, 4)
        assert (emb.block("contextual") == 4.0).all()

    def test_width_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            assemble_embedding(np.ones((4, 5)), np.ones((3, 2)),
                               np.ones((4, 2)), np.ones((4, 2)), n_users=2)
        with pytest.raises(DimensionError):
            assemble_embedding(np.ones((4, 6)), np.ones((4, 2)),
                               np.ones((4, 2)), np.ones((4, 2)), n_users=2)

    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        emb = assemble_embedding(
            rng.normal(size=(5, 5)), rng.normal(size=(5, 2)),
            rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), n_users=2,
        )
        save_embedding(emb, tmp_path / "f.bin", tmp_path / "f.json")
        loaded = load_embedding(tmp_path / "f.bin", tmp_path / "f.json")
        np.testing.assert_array_equal(loaded.matrix, emb.matrix)
        assert loaded.block_widths == emb.block_widths
        assert loaded.n_users == emb.n_users
        np.testing.assert_array_equal(loaded.scale_min, emb.scale_min)
