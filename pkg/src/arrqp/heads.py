"""Dedicated MLP regression heads for grey-sheep and cold-start pairs.

Each head consumes the concatenation of a user feature vector and a service
feature vector.  A grey-sheep entity is described richly (graph embedding,
initial features, anomaly score, invocation count) while a regular entity
contributes just its graph embedding.  A cold entity has no usable history,
so its vector holds contextual features plus a collaborative block that is
zeroed by default (there is nothing to factorize for a new entity); the
cold-start heads are therefore trained on regular pairs with the designated
side rendered in that same cold style.

All heads share one architecture: sigmoid 128-50-1 trained on min-max
scaled targets with the Cauchy loss, Adam, mini-batches of 32 and
patience-3 early stopping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anomaly import GaScores
from .data import QosMatrix
from .features import FeatureEmbedding
from .nn import Dense, TrainConfig, TrainResult, train_loop
from .nn.losses import LOSSES

GRRQP_CATEGORIES = ("regular_gss", "gsu_regular", "gsu_gss")
CRRQP_CATEGORIES = ("csu", "css", "csb")


class RoutingError(ValueError):
    """A pair was sent to a head whose category it does not belong to."""


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...] = (128, 50, 1)
    activation: str = "sigmoid"  # hidden and output; targets are scaled to [0, 1]
    loss: str = "cauchy"
    gamma: float = 0.25
    optimizer: str = "adam"
    learning_rate: float = 0.001
    patience: int = 3
    max_epochs: int = 500
    batch_size: int = 32
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.layer_sizes[-1] != 1:
            raise ValueError("regression head must end in a single unit")


class MlpHead:
    """Sigmoid MLP regressor with min-max target scaling."""

    def __init__(self, in_dim: int, config: MlpConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.layers = []
        prev = in_dim
        for k, size in enumerate(config.layer_sizes):
            self.layers.append(
                Dense(prev, size, rng, activation=config.activation, name=f"mlp{k}")
            )
            prev = size
        self._shuffle_rng = np.random.default_rng(rng.integers(2**32))
        self.target_lo = 0.0
        self.target_range = 1.0
        self.training: TrainResult | None = None

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def _forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x[:, 0]

    def _backward(self, dout: np.ndarray) -> None:
        dx = dout[:, None]
        for layer in reversed(self.layers):
            dx = layer.backward(dx)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._forward(x) * self.target_range + self.target_lo

    def fit(self, x: np.ndarray, y: np.ndarray) -> TrainResult:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        cfg = self.config
        lo, hi = float(y.min()), float(y.max())
        self.target_lo = lo
        self.target_range = (hi - lo) if hi > lo else 1.0
        y_scaled = (y - self.target_lo) / self.target_range

        n = x.shape[0]
        n_val = int(round(n * cfg.validation_fraction))
        order = np.random.default_rng(cfg.seed).permutation(n)
        val_idx, train_idx = order[:n_val], order[n_val:]
        if train_idx.size == 0:
            train_idx = order
            val_idx = order
        x_tr, y_tr = x[train_idx], y_scaled[train_idx]
        x_va, y_va = (x[val_idx], y_scaled[val_idx]) if val_idx.size else (x_tr, y_tr)

        loss_fn, loss_grad = LOSSES[cfg.loss]
        from .nn import make_optimizer

        optimizer = make_optimizer(cfg.optimizer, self.params(), cfg.learning_rate)

        def epoch_fn():
            order = self._shuffle_rng.permutation(x_tr.shape[0])
            total = 0.0
            for start in range(0, order.size, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                for p in self.params():
                    p.zero_grad()
                preds = self._forward(x_tr[idx])
                total += loss_fn(y_tr[idx], preds, cfg.gamma)
                self._backward(loss_grad(y_tr[idx], preds, cfg.gamma))
                optimizer.step()
            return total / x_tr.shape[0]

        def val_fn():
            preds = self._forward(x_va)
            return loss_fn(y_va, preds, cfg.gamma) / max(x_va.shape[0], 1)

        loop_cfg = TrainConfig(
            optimizer=cfg.optimizer,
            learning_rate=cfg.learning_rate,
            max_epochs=cfg.max_epochs,
            patience=cfg.patience,
            seed=cfg.seed,
        )
        self.training = train_loop(epoch_fn, val_fn, self.params(), loop_cfg)
        return self.training


# ---------------------------------------------------------------------------
# feature construction


@dataclass(frozen=True)
class PairFeatureContext:
    """Everything needed to describe one side of a user-service pair."""

    user_embeddings: np.ndarray  # n x e
    service_embeddings: np.ndarray  # m x e
    embedding: FeatureEmbedding
    ga: GaScores
    user_counts: np.ndarray
    service_counts: np.ndarray
    gs_users: frozenset[int]
    gs_services: frozenset[int]
    cold_users: frozenset[int]
    cold_services: frozenset[int]
    cold_collab_mode: str = "zeros"  # or "nmf_mean"

    @property
    def greysheep_user_width(self) -> int:
        return self.user_embeddings.shape[1] + self.embedding.width + 2

    @property
    def greysheep_service_width(self) -> int:
        return self.service_embeddings.shape[1] + self.embedding.width + 2

    def _ctx_block(self, node_row: int) -> np.ndarray:
        return self.embedding.block("contextual")[node_row]

    def _collab_block(self, node_row: int, is_cold: bool) -> np.ndarray:
        collab = self.embedding.block("collaborative")
        if self.cold_collab_mode == "zeros":
            return np.zeros(collab.shape[1])
        if not is_cold:
            return collab[node_row]
        # stand-in for a cold entity: mean over the warm rows of its side
        n = self.embedding.n_users
        if node_row < n:
            warm = [i for i in range(n) if i not in self.cold_users]
        else:
            warm = [n + j for j in range(self.embedding.n_services)
                    if j not in self.cold_services]
        return collab[warm].mean(axis=0) if warm else np.zeros(collab.shape[1])

    def greysheep_user(self, i: int) -> np.ndarray:
        return np.concatenate([
            self.user_embeddings[i],
            self.embedding.matrix[i],
            [self.ga.user_scores[i]],
            [self.user_counts[i]],
        ])

    def greysheep_service(self, j: int) -> np.ndarray:
        n = self.embedding.n_users
        return np.concatenate([
            self.service_embeddings[j],
            self.embedding.matrix[n + j],
            [self.ga.service_scores[j]],
            [self.service_counts[j]],
        ])

    def cold_user(self, i: int, simulated: bool = False) -> np.ndarray:
        return np.concatenate([
            self._ctx_block(i),
            self._collab_block(i, is_cold=not simulated),
        ])

    def cold_service(self, j: int, simulated: bool = False) -> np.ndarray:
        n = self.embedding.n_users
        return np.concatenate([
            self._ctx_block(n + j),
            self._collab_block(n + j, is_cold=not simulated),
        ])


def grrqp_category(ctx: PairFeatureContext, i: int, j: int) -> str | None:
    gsu = i in ctx.gs_users
    gss = j in ctx.gs_services
    if gsu and gss:
        return "gsu_gss"
    if gsu:
        return "gsu_regular"
    if gss:
        return "regular_gss"
    return None


def crrqp_category(ctx: PairFeatureContext, i: int, j: int) -> str | None:
    csu = i in ctx.cold_users
    css = j in ctx.cold_services
    if csu and css:
        return "csb"
    if csu:
        return "csu"
    if css:
        return "css"
    return None


def build_grrqp_features(ctx: PairFeatureContext, i: int, j: int, category: str) -> np.ndarray:
    """[user block || service block]; grey-sheep sides use the rich vector."""
    actual = grrqp_category(ctx, i, j)
    if category not in GRRQP_CATEGORIES:
        raise RoutingError(f"unknown grey-sheep category {category!r}")
    if actual != category:
        raise RoutingError(
            f"pair ({i}, {j}) belongs to category {actual}, not {category}"
        )
    user = ctx.greysheep_user(i) if i in ctx.gs_users else ctx.user_embeddings[i]
    service = ctx.greysheep_service(j) if j in ctx.gs_services else ctx.service_embeddings[j]
    return np.concatenate([user, service])


def build_crrqp_features(ctx: PairFeatureContext, i: int, j: int, category: str) -> np.ndarray:
    """[user block || service block]; cold sides carry context + collaborative."""
    actual = crrqp_category(ctx, i, j)
    if category not in CRRQP_CATEGORIES:
        raise RoutingError(f"unknown cold-start category {category!r}")
    if actual != category:
        raise RoutingError(
            f"pair ({i}, {j}) belongs to category {actual}, not {category}"
        )
    user = ctx.cold_user(i) if i in ctx.cold_users else ctx.user_embeddings[i]
    service = ctx.cold_service(j) if j in ctx.cold_services else ctx.service_embeddings[j]
    return np.concatenate([user, service])


def _crrqp_training_features(ctx: PairFeatureContext, i: int, j: int, category: str) -> np.ndarray:
    """Training view: render the designated side(s) cold-style."""
    if category == "csu":
        return np.concatenate([ctx.cold_user(i, simulated=True), ctx.service_embeddings[j]])
    if category == "css":
        return np.concatenate([ctx.user_embeddings[i], ctx.cold_service(j, simulated=True)])
    return np.concatenate([
        ctx.cold_user(i, simulated=True), ctx.cold_service(j, simulated=True)
    ])


# ---------------------------------------------------------------------------
# training


def train_grrqp(
    train: QosMatrix,
    ctx: PairFeatureContext,
    config: MlpConfig,
) -> dict[str, MlpHead | None]:
    """One head per grey-sheep pair category, trained on its observed pairs.

    Categories with no training pairs stay None; callers fall back to the
    base predictor for them.
    """
    rows, cols = train.observed_indices()
    buckets: dict[str, list[int]] = {cat: [] for cat in GRRQP_CATEGORIES}
    for k, (i, j) in enumerate(zip(rows, cols)):
        cat = grrqp_category(ctx, int(i), int(j))
        if cat is not None:
            buckets[cat].append(k)

    heads: dict[str, MlpHead | None] = {}
    for cat, idx in buckets.items():
        if not idx:
            heads[cat] = None
            continue
        x = np.vstack([
            build_grrqp_features(ctx, int(rows[k]), int(cols[k]), cat) for k in idx
        ])
        y = train.values[rows[idx], cols[idx]]
        head = MlpHead(x.shape[1], config)
        head.fit(x, y)
        heads[cat] = head
    return heads


def train_crrqp(
    train: QosMatrix,
    ctx: PairFeatureContext,
    config: MlpConfig,
    max_pairs: int | None = None,
) -> dict[str, MlpHead | None]:
    """One head per cold category, trained on all observed pairs rendered
    with the designated side(s) in cold style.

    Cold entities have no observed pairs of their own, so the heads learn
    the context-to-QoS mapping from regular pairs instead.  ``max_pairs``
    caps the training set (seeded subsample) for large matrices.
    """
    rows, cols = train.observed_indices()
    if rows.size == 0:
        return {cat: None for cat in CRRQP_CATEGORIES}
    keep = np.arange(rows.size)
    if max_pairs is not None and rows.size > max_pairs:
        keep = np.random.default_rng(config.seed).choice(rows.size, max_pairs, replace=False)
        keep.sort()
    y = train.values[rows[keep], cols[keep]]

    heads: dict[str, MlpHead | None] = {}
    for cat in CRRQP_CATEGORIES:
        x = np.vstack([
            _crrqp_training_features(ctx, int(rows[k]), int(cols[k]), cat) for k in keep
        ])
        head = MlpHead(x.shape[1], config)
        head.fit(x, y)
        heads[cat] = head
    return heads
