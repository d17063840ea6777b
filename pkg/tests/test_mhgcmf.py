import time

import numpy as np
import pytest

from arrqp import (
    ArrqpConfig,
    QosMatrix,
    SplitSpec,
    build_adjacency,
    build_feature_embedding,
    generate_synthetic,
    global_mean_baseline,
    mae,
    normalize,
    split,
    train_sorrqp,
)
from arrqp.mhgcmf import GraphConvUnit, MhGcmfConfig, MhGcmfModel
from arrqp.nn import TrainConfig, relu
from arrqp.nn.losses import cauchy_loss

from conftest import (
    finite_difference as _fd,
    path_matrix,
    random_masked_matrix,
    rel_err as _rel_err,
    small_training_setup,
)


def toy_setup(seed=0, n=3, m=3, f=6, density=0.8):
    rng = np.random.default_rng(seed)
    matrix = random_masked_matrix(rng, n, m, density=density)
    a_hat = normalize(build_adjacency(matrix, sparse=False))
    f0 = rng.uniform(0.0, 1.0, size=(n + m, f))
    return matrix, a_hat, f0


class TestGraphConvUnit:
    def test_zero_weights_zero_output(self):
        _, a_hat, f0 = toy_setup()
        unit = GraphConvUnit(6, 5, 4, np.random.default_rng(0))
        unit.w1.value[:] = 0
        assert not unit.forward(a_hat, f0).any()

    def test_identity_graph_reduces_to_mlp(self):
        rng = np.random.default_rng(1)
        f0 = rng.uniform(-1, 1, size=(5, 6))
        unit = GraphConvUnit(6, 5, 4, rng)
        out = unit.forward(np.eye(5), f0)
        expected = relu(relu(f0 @ unit.w1.value) @ unit.w2.value)
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_two_hop_locality(self):
        # path u0 - s0 - u1 - s1 - u2: node s1 sits 3 hops from u0
        matrix = path_matrix(3, 2, [(0, 0), (1, 0), (1, 1), (2, 1)])
        a_hat = normalize(build_adjacency(matrix, sparse=False))
        rng = np.random.default_rng(2)
        f0 = rng.uniform(0, 1, size=(5, 6))
        unit = GraphConvUnit(6, 5, 4, rng)
        base = unit.forward(a_hat, f0)

        s1_node = 3 + 1  # service index 1
        perturbed = f0.copy()
        perturbed[s1_node] += 10.0
        out = unit.forward(a_hat, perturbed)
        np.testing.assert_array_equal(out[0], base[0])  # u0 is beyond 2 hops
        assert not np.array_equal(out[1], base[1])  # u1 is 1 hop from s1

    def test_gradient_check(self):
        _, a_hat, f0 = toy_setup(seed=3)
        rng = np.random.default_rng(3)
        unit = GraphConvUnit(6, 5, 4, rng)
        target = rng.normal(size=(6, 4))

        def loss():
            return float(((unit.forward(a_hat, f0) - target) ** 2).sum())

        unit.w1.zero_grad()
        unit.w2.zero_grad()
        out = unit.forward(a_hat, f0)
        df = unit.backward(2 * (out - target))
        for param in (unit.w1, unit.w2):
            numeric = _fd(loss, param.value)
            assert _rel_err(param.grad, numeric) < 1e-5
        assert _rel_err(df, _fd(loss, f0)) < 1e-5


class TestMhGcmfForward:
    def test_output_shapes(self):
        matrix, a_hat, f0 = toy_setup(n=4, m=7, f=9)
        model = MhGcmfModel(MhGcmfConfig(in_dim=9, n_heads=3, n_blocks=2, seed=0))
        out = model.forward(a_hat, f0)
        assert out.shape == (11, 64)

    def test_single_head_identity_conv_equals_gcmfu(self):
        _, a_hat, f0 = toy_setup(seed=5)
        model = MhGcmfModel(MhGcmfConfig(
            in_dim=6, n_heads=1, n_blocks=1, hidden_dim=5, embed_dim=4, seed=1,
        ))
        model.blocks[0].conv.w.value[:] = 1.0
        model.blocks[0].conv.b.value[...] = 0.0
        model.final_conv.w.value[:] = 1.0
        model.final_conv.b.value[...] = 0.0
        out = model.forward(a_hat, f0)
        unit = model.blocks[0].units[0]
        np.testing.assert_allclose(out, unit.forward(a_hat, f0), atol=1e-12)

    def test_identical_heads_mix_linearly(self):
        _, a_hat, f0 = toy_setup(seed=6)
        model = MhGcmfModel(MhGcmfConfig(
            in_dim=6, n_heads=3, n_blocks=1, hidden_dim=5, embed_dim=4, seed=2,
        ))
        block = model.blocks[0]
        for unit in block.units[1:]:
            unit.w1.value = block.units[0].w1.value.copy()
            unit.w2.value = block.units[0].w2.value.copy()
        model.final_conv.w.value[:] = 1.0
        model.final_conv.b.value[...] = 0.0
        out = model.forward(a_hat, f0)
        single = block.units[0].forward(a_hat, model.pre.forward(f0))
        expected = block.conv.w.value.sum() * single + block.conv.b.value
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_end_to_end_gradient_check(self):
        matrix, a_hat, f0 = toy_setup(seed=7, n=3, m=3, f=5)
        rows, cols = matrix.observed_indices()
        vals = matrix.values[rows, cols]
        n = matrix.n_users
        model = MhGcmfModel(MhGcmfConfig(
            in_dim=5, n_heads=2, n_blocks=2, hidden_dim=4, embed_dim=3, seed=3,
        ))

        def loss():
            e = model.forward(a_hat, f0)
            preds = np.einsum("ij,ij->i", e[:n][rows], e[n:][cols])
            return cauchy_loss(vals, preds, 0.5)

        model.zero_grad()
        e = model.forward(a_hat, f0)
        preds = np.einsum("ij,ij->i", e[:n][rows], e[n:][cols])
        from arrqp.nn.losses import cauchy_grad
        import scipy.sparse as sp

        g = cauchy_grad(vals, preds, 0.5)
        gm = sp.coo_matrix((g, (rows, cols)), shape=(n, matrix.n_services)).tocsr()
        de = np.vstack([gm @ e[n:], gm.T @ e[:n]])
        model.backward(de)

        start = time.perf_counter()
        for param in model.params():
            numeric = _fd(loss, param.value, step=1e-6)
            assert _rel_err(param.grad, numeric) < 1e-4, param.name
        assert time.perf_counter() - start < 30

    def test_per_head_dense_mode(self):
        _, a_hat, f0 = toy_setup(seed=8)
        model = MhGcmfModel(MhGcmfConfig(
            in_dim=6, n_heads=2, n_blocks=2, hidden_dim=5, embed_dim=4,
            dense_mode="per_head", seed=4,
        ))
        out = model.forward(a_hat, f0)
        assert out.shape == (6, 4)
        assert model.pre is None
        assert model.blocks[0].head_dense is not None
        assert model.blocks[1].head_dense is None

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        n, m = 4, 5
        matrix = random_masked_matrix(rng, n, m, density=0.6)
        a_hat = normalize(build_adjacency(matrix, sparse=False))
        f0 = rng.uniform(0, 1, size=(n + m, 7))
        model = MhGcmfModel(MhGcmfConfig(
            in_dim=7, n_heads=2, n_blocks=2, hidden_dim=5, embed_dim=4, seed=5,
        ))
        base = model.forward(a_hat, f0)

        perm_users = rng.permutation(n)
        perm = np.concatenate([perm_users, np.arange(n, n + m)])
        out = model.forward(a_hat[np.ix_(perm, perm)], f0[perm])
        np.testing.assert_allclose(out, base[perm], atol=1e-10)

    def test_four_hop_locality(self):
        # path u0-s0-u1-s1-u2-s2-u3: s2 is 5 hops from u0, s1 is 3 hops
        matrix = path_matrix(4, 3, [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2)])
        a_hat = normalize(build_adjacency(matrix, sparse=False))
        rng = np.random.default_rng(10)
        f0 = rng.uniform(0, 1, size=(7, 6))
        model = MhGcmfModel(MhGcmfConfig(
            in_dim=6, n_heads=1, n_blocks=2, hidden_dim=5, embed_dim=4, seed=6,
        ))
        base = model.forward(a_hat, f0)

        s2_node = 4 + 2
        far = f0.copy()
        far[s2_node] += 5.0
        np.testing.assert_array_equal(model.forward(a_hat, far)[0], base[0])

        s1_node = 4 + 1
        near = f0.copy()
        near[s1_node] += 5.0
        assert not np.array_equal(model.forward(a_hat, near)[0], base[0])

    def test_head_count_range(self):
        with pytest.raises(ValueError):
            MhGcmfConfig(in_dim=5, n_heads=9)
        with pytest.raises(ValueError):
            MhGcmfConfig(in_dim=5, n_heads=0)


@pytest.fixture(scope="module")
def trained():
    ds, train, val, test, f0, a_hat = small_training_setup(seed=0)
    model_cfg = MhGcmfConfig(in_dim=f0.width, n_heads=1, n_blocks=2, seed=0)
    train_cfg = TrainConfig(max_epochs=2200, patience=300, learning_rate=2e-4, seed=0)
    model = train_sorrqp(train, val, f0.matrix, a_hat, model_cfg, train_cfg,
                         gamma=0.25)
    return train, test, model


class TestTraining:
    def test_loss_decreases_early(self, trained):
        _, _, model = trained
        losses = model.training.train_losses
        for a, b in zip(losses[:9], losses[1:10]):
            assert b < a

    def test_beats_global_mean_baseline(self, trained):
        train, test, model = trained
        rows, cols = test.observed_indices()
        actual = test.values[rows, cols]
        preds = model.predict_pairs(rows, cols)
        baseline = np.full(actual.size, global_mean_baseline(train))
        assert mae(actual, preds) < 0.7 * mae(actual, baseline)

    def test_predictions_are_embedding_dots(self, trained):
        _, test, model = trained
        qhat = model.predicted_matrix()
        rng = np.random.default_rng(0)
        for _ in range(50):
            i = int(rng.integers(model.n_users))
            j = int(rng.integers(model.n_services))
            assert model.predict(i, j) == pytest.approx(qhat[i, j], abs=1e-12)
            assert model.predict(i, j) == pytest.approx(
                float(model.user_embeddings[i] @ model.service_embeddings[j]), abs=1e-15,
            )

    def test_zero_embedding_predicts_zero(self, trained):
        _, _, model = trained
        model_copy_row = model.user_embeddings[0].copy()
        try:
            model.user_embeddings[0] = 0.0
            assert model.predict(0, 0) == 0.0
        finally:
            model.user_embeddings[0] = model_copy_row

    def test_out_of_range_indices(self, trained):
        _, _, model = trained
        with pytest.raises(IndexError):
            model.predict(10_000, 0)
        with pytest.raises(IndexError):
            model.predict(0, -200)

    def test_prediction_throughput(self, trained):
        _, _, model = trained
        n_calls = 30_000
        rng = np.random.default_rng(1)
        users = rng.integers(0, model.n_users, size=n_calls)
        services = rng.integers(0, model.n_services, size=n_calls)
        start = time.perf_counter()
        for u, s in zip(users, services):
            model.predict(int(u), int(s))
        elapsed = time.perf_counter() - start
        assert n_calls / elapsed > 1e5

    def test_deterministic(self):
        ds, train, val, test, f0, a_hat = small_training_setup(seed=4)
        cfg = MhGcmfConfig(in_dim=f0.width, n_heads=1, n_blocks=2, seed=4)
        tcfg = TrainConfig(max_epochs=30, patience=30, seed=4)
        a = train_sorrqp(train, val, f0.matrix, a_hat, cfg, tcfg, gamma=0.25)
        b = train_sorrqp(train, val, f0.matrix, a_hat, cfg, tcfg, gamma=0.25)
        np.testing.assert_array_equal(a.user_embeddings, b.user_embeddings)
        np.testing.assert_array_equal(a.training.train_losses, b.training.train_losses)
