import numpy as np
import pytest

from arrqp import (
    ArrqpConfig,
    QosMatrix,
    SplitSpec,
    build_adjacency,
    build_feature_embedding,
    generate_synthetic,
    normalize,
    split,
)


@pytest.fixture
def deviant_user_matrix():
    """Four users over two services; u4's invocations break the additive
    pattern while everyone agrees on s2."""
    values = np.array([
        [1.0, 2.0],
        [2.0, 2.0],
        [3.0, 2.0],
        [10.0, 2.0],
    ])
    return QosMatrix(values=values, mask=np.ones_like(values, dtype=bool))


def random_masked_matrix(rng, n, m, density=0.4, positive_scale=5.0):
    values = rng.uniform(0.1, positive_scale, size=(n, m))
    mask = rng.random((n, m)) < density
    return QosMatrix(values=np.where(mask, values, 0.0), mask=mask)


def path_matrix(n_users, n_services, edges):
    values = np.zeros((n_users, n_services))
    for u, s in edges:
        values[u, s] = 1.0
    return QosMatrix(values=values, mask=values > 0)


def finite_difference(fn, x, step=1e-6):
    """Central differences of a scalar function over an array argument."""
    grad = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = fn()
        flat[k] = orig - step
        lo = fn()
        flat[k] = orig
        out[k] = (hi - lo) / (2 * step)
    return grad


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def desk_config(seed=0, **overrides):
    """Desk-scale pipeline configuration: small dims, short training."""
    base = dict(
        synthetic={"n": 30, "m": 50, "rank": 3, "density": 0.35, "noise_std": 0.02},
        density=70.0, d_n=6, d_s=6, d_c=6,
        ae_max_epochs=40, ae_dropout=(0.0, 0.0), nmf_max_iters=150,
        n_heads=1, t=2, gamma=0.25,
        learning_rate=2e-4, max_epochs=800, patience=150,
        c=1.0, lam=0.0,
        head_max_epochs=300, head_patience=10, head_learning_rate=0.003,
        runs=1, evaluate_cleaned_test=False, seed=seed,
    )
    synthetic_over = overrides.pop("synthetic", None)
    if synthetic_over is not None:
        base["synthetic"] = {**base["synthetic"], **synthetic_over}
    base.update(overrides)
    return ArrqpConfig(**base)


def small_training_setup(seed=0, density=0.2, n=30, m=50):
    """Rank-3 synthetic matrix with features and normalized adjacency."""
    ds, _ = generate_synthetic(n=n, m=m, rank=3, density=density,
                               noise_std=0.01, seed=seed)
    train, val, test = split(ds, SplitSpec(train_fraction=70, seed=seed))
    cfg = ArrqpConfig(
        synthetic={}, d_n=6, d_s=6, d_c=6, ae_max_epochs=40,
        ae_dropout=(0.0, 0.0), nmf_max_iters=150, seed=seed,
    )
    f0 = build_feature_embedding(train, ds, cfg, seed=seed)
    a_hat = normalize(build_adjacency(train))
    return ds, train, val, test, f0, a_hat
