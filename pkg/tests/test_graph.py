import numpy as np
import pytest
import scipy.sparse as sp

from arrqp import QosMatrix, build_adjacency, build_qig, export_adjacency, normalize

from conftest import random_masked_matrix


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a)


class TestAdjacency:
    def test_single_invocation(self):
        matrix = QosMatrix(values=np.array([[1.5]]), mask=np.array([[True]]))
        a = _dense(build_adjacency(matrix))
        assert a.tolist() == [[1.0, 1.0], [1.0, 1.0]]

    def test_isolated_user_row_is_unit_vector(self):
        values = np.array([[0.0, 0.0], [1.0, 2.0]])
        mask = values > 0
        a = _dense(build_adjacency(QosMatrix(values=values, mask=mask)))
        np.testing.assert_array_equal(a[0], [1.0, 0.0, 0.0, 0.0])

    def test_nnz_formula(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            matrix = random_masked_matrix(rng, int(rng.integers(2, 8)), int(rng.integers(2, 8)))
            n_edges = matrix.observed_count
            big_n = matrix.n_users + matrix.n_services
            a = _dense(build_adjacency(matrix))
            assert np.count_nonzero(a) == big_n + 2 * n_edges

    def test_bipartite_blocks_empty(self):
        rng = np.random.default_rng(4)
        matrix = random_masked_matrix(rng, 5, 7)
        a = _dense(build_adjacency(matrix))
        users = a[:5, :5] - np.eye(5)
        services = a[5:, 5:] - np.eye(7)
        assert not users.any()
        assert not services.any()

    def test_training_edges_only(self):
        # adding extra (test) edges changes A exactly at those two symmetric spots
        values = np.array([[1.0, 0.0], [0.0, 2.0]])
        train = QosMatrix(values=values, mask=values > 0)
        more = values.copy()
        more[0, 1] = 3.0
        both = QosMatrix(values=more, mask=more > 0)
        a1 = _dense(build_adjacency(train))
        a2 = _dense(build_adjacency(both))
        diff = np.argwhere(a1 != a2)
        assert sorted(map(tuple, diff)) == [(0, 3), (3, 0)]


class TestNormalize:
    def test_two_node_uniform(self):
        matrix = QosMatrix(values=np.array([[1.5]]), mask=np.array([[True]]))
        a_hat = _dense(normalize(build_adjacency(matrix)))
        np.testing.assert_allclose(a_hat, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_isolated_node_row(self):
        values = np.array([[0.0, 0.0], [1.0, 2.0]])
        matrix = QosMatrix(values=values, mask=values > 0)
        a_hat = _dense(normalize(build_adjacency(matrix)))
        np.testing.assert_allclose(a_hat[0], [1.0, 0.0, 0.0, 0.0], atol=1e-15)

    def test_star_value(self):
        # one user invoking 3 services: user degree 4, service degree 2
        values = np.array([[1.0, 1.0, 1.0]])
        matrix = QosMatrix(values=values, mask=values > 0)
        a_hat = _dense(normalize(build_adjacency(matrix)))
        expected = 1.0 / (np.sqrt(4) * np.sqrt(2))
        for k in range(1, 4):
            assert a_hat[0, k] == pytest.approx(expected, abs=1e-12)
        assert a_hat[0, k] == pytest.approx(0.3535533905932738, abs=1e-9)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(1, 25))
            m = int(rng.integers(1, 25))
            if n + m > 50:
                continue
            matrix = random_masked_matrix(rng, n, m, density=float(rng.uniform(0.05, 0.9)))
            a = _dense(build_adjacency(matrix))
            d = np.diag(1.0 / np.sqrt(a.sum(axis=1)))
            oracle = d @ a @ d
            a_hat = _dense(normalize(build_adjacency(matrix)))
            np.testing.assert_allclose(a_hat, oracle, atol=1e-12)
            np.testing.assert_allclose(a_hat, a_hat.T, atol=1e-12)
            eigs = np.linalg.eigvalsh(a_hat)
            assert eigs.min() >= -1 - 1e-10
            assert eigs.max() <= 1 + 1e-10

    def test_regular_graph_row_sums(self):
        # complete bipartite 2x2: every degree equals 3, rows sum to 1
        values = np.ones((2, 2))
        matrix = QosMatrix(values=values, mask=values > 0)
        a_hat = _dense(normalize(build_adjacency(matrix)))
        np.testing.assert_allclose(a_hat.sum(axis=1), np.ones(4), atol=1e-12)

    def test_sparse_and_dense_agree(self):
        rng = np.random.default_rng(8)
        matrix = random_masked_matrix(rng, 6, 9)
        dense = normalize(build_adjacency(matrix, sparse=False))
        sparse = normalize(build_adjacency(matrix, sparse=True))
        np.testing.assert_allclose(_dense(sparse), dense, atol=1e-15)


class TestQigAndExport:
    def test_qig_edges(self):
        values = np.array([[1.0, 0.0], [0.0, 2.0]])
        qig = build_qig(QosMatrix(values=values, mask=values > 0))
        assert qig.edges == ((0, 0), (1, 1))
        assert qig.n_nodes == 4

    def test_export_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        matrix = random_masked_matrix(rng, 4, 5)
        a = build_adjacency(matrix)
        path = tmp_path / "adj.txt"
        export_adjacency(a, path)
        rebuilt = np.zeros((9, 9))
        for line in path.read_text().splitlines():
            i, j, v = line.split()
            rebuilt[int(i), int(j)] = float(v)
        np.testing.assert_array_equal(rebuilt, _dense(a))
