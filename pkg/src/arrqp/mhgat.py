"""Multi-head graph attention model used for the with/without-attention
comparison.

Neighbors are weighted by a softmax over leaky-ReLU attention scores
a^T [W f_i || W f_j]; per-head aggregations are concatenated and added back
to the layer input (residual).  Because the residual forces the layer width
to equal heads * head_dim, the raw node features pass through a dense
pre-projection first, and a final dense layer maps to the embedding width.
Training mirrors the graph-convolution model: Cauchy loss, Adam, early
stopping, row split and dot-product prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import QosMatrix
from .nn import (
    Dense,
    Parameter,
    TrainConfig,
    TrainResult,
    glorot_uniform,
    leaky_relu,
    leaky_relu_grad,
    relu,
    train_loop,
)
from .nn.losses import LOSSES


@dataclass(frozen=True)
class MhGatConfig:
    in_dim: int
    n_heads: int = 1
    n_layers: int = 2
    head_dim: int = 64
    embed_dim: int = 64
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_heads <= 8:
            raise ValueError("head count must lie in 1..8")

    @property
    def width(self) -> int:
        return self.n_heads * self.head_dim


def adjacency_edges(train: QosMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Directed (target, source) edge arrays including self-loops."""
    n = train.n_users
    big_n = n + train.n_services
    rows, cols = train.observed_indices()
    tgt = np.concatenate([np.arange(big_n), rows, cols + n])
    src = np.concatenate([np.arange(big_n), cols + n, rows])
    order = np.lexsort((src, tgt))
    return tgt[order], src[order]


def edge_softmax(scores: np.ndarray, targets: np.ndarray, n_nodes: int) -> np.ndarray:
    """Per-target softmax over edge scores, max-shifted for stability."""
    shift = np.full(n_nodes, -np.inf)
    np.maximum.at(shift, targets, scores)
    ex = np.exp(scores - shift[targets])
    denom = np.zeros(n_nodes)
    np.add.at(denom, targets, ex)
    return ex / denom[targets]


class GatHead:
    """One attention head: projection W plus the split score vector."""

    def __init__(self, in_dim: int, out_dim: int, leaky_slope: float,
                 rng: np.random.Generator, name: str = "head"):
        self.w = Parameter(glorot_uniform(rng, in_dim, out_dim), f"{name}.w")
        # a^T [z_i || z_j] = a_tgt . z_i + a_src . z_j
        self.a_tgt = Parameter(glorot_uniform(rng, 2 * out_dim, 1, shape=(out_dim,)),
                               f"{name}.a_tgt")
        self.a_src = Parameter(glorot_uniform(rng, 2 * out_dim, 1, shape=(out_dim,)),
                               f"{name}.a_src")
        self.leaky_slope = leaky_slope
        self._cache = None

    def params(self) -> list[Parameter]:
        return [self.w, self.a_tgt, self.a_src]

    def attention(self, f: np.ndarray, tgt: np.ndarray, src: np.ndarray) -> np.ndarray:
        """Per-edge attention weights alpha_ij (sums to 1 per target node)."""
        z = f @ self.w.value
        raw = z @ self.a_tgt.value
        raws = z @ self.a_src.value
        scores = leaky_relu(raw[tgt] + raws[src], self.leaky_slope)
        return edge_softmax(scores, tgt, f.shape[0])

    def forward(self, f: np.ndarray, tgt: np.ndarray, src: np.ndarray) -> np.ndarray:
        n = f.shape[0]
        z = f @ self.w.value
        t_score = z @ self.a_tgt.value
        s_score = z @ self.a_src.value
        pre_score = t_score[tgt] + s_score[src]
        score = leaky_relu(pre_score, self.leaky_slope)
        alpha = edge_softmax(score, tgt, n)
        agg = sp.coo_matrix((alpha, (tgt, src)), shape=(n, n)).tocsr()
        pre_out = agg @ z
        self._cache = (f, z, tgt, src, pre_score, alpha, agg, pre_out)
        return relu(pre_out)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        f, z, tgt, src, pre_score, alpha, agg, pre_out = self._cache
        n = f.shape[0]
        dpre = dout * (pre_out > 0)

        dz = agg.T @ dpre  # value path
        dalpha = np.einsum("ed,ed->e", dpre[tgt], z[src])
        # softmax backward per target node
        weighted = np.zeros(n)
        np.add.at(weighted, tgt, alpha * dalpha)
        dscore = alpha * (dalpha - weighted[tgt])
        dpre_score = dscore * leaky_relu_grad(pre_score, self.leaky_slope)

        dt = np.zeros(n)
        ds = np.zeros(n)
        np.add.at(dt, tgt, dpre_score)
        np.add.at(ds, src, dpre_score)
        self.a_tgt.grad += z.T @ dt
        self.a_src.grad += z.T @ ds
        dz += dt[:, None] * self.a_tgt.value[None, :]
        dz += ds[:, None] * self.a_src.value[None, :]

        self.w.grad += f.T @ dz
        return dz @ self.w.value.T


class GatLayer:
    """Residual multi-head attention layer; width = heads * head_dim."""

    def __init__(self, config: MhGatConfig, rng: np.random.Generator, tag: str = "gat"):
        self.heads = [
            GatHead(config.width, config.head_dim, config.leaky_slope, rng, f"{tag}.h{h}")
            for h in range(config.n_heads)
        ]
        self.head_dim = config.head_dim

    def params(self) -> list[Parameter]:
        return [p for h in self.heads for p in h.params()]

    def forward(self, f: np.ndarray, tgt: np.ndarray, src: np.ndarray) -> np.ndarray:
        if f.shape[1] != len(self.heads) * self.head_dim:
            raise ValueError(
                f"residual needs width {len(self.heads) * self.head_dim}, got {f.shape[1]}"
            )
        return f + np.hstack([h.forward(f, tgt, src) for h in self.heads])

    def backward(self, dout: np.ndarray) -> np.ndarray:
        df = dout.copy()  # residual path
        for k, head in enumerate(self.heads):
            sl = dout[:, k * self.head_dim : (k + 1) * self.head_dim]
            df += head.backward(sl)
        return df


class MhGatModel:
    def __init__(self, config: MhGatConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.pre = Dense(config.in_dim, config.width, rng, name="pre")
        self.layers = [GatLayer(config, rng, tag=f"gat{k}") for k in range(config.n_layers)]
        self.final = Dense(config.width, config.embed_dim, rng, name="final")

    def params(self) -> list[Parameter]:
        out = self.pre.params()
        for layer in self.layers:
            out = out + layer.params()
        return out + self.final.params()

    def forward(self, f0: np.ndarray, tgt: np.ndarray, src: np.ndarray) -> np.ndarray:
        x = self.pre.forward(f0)
        for layer in self.layers:
            x = layer.forward(x, tgt, src)
        return self.final.forward(x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx = self.final.backward(dout)
        for layer in reversed(self.layers):
            dx = layer.backward(dx)
        return self.pre.backward(dx)

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


@dataclass
class TrainedMhGat:
    model: MhGatModel
    user_embeddings: np.ndarray
    service_embeddings: np.ndarray
    gamma: float
    training: TrainResult

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def n_services(self) -> int:
        return self.service_embeddings.shape[0]

    def predict(self, user: int, service: int) -> float:
        if not 0 <= user < self.n_users:
            raise IndexError(f"user index {user} out of range")
        if not 0 <= service < self.n_services:
            raise IndexError(f"service index {service} out of range")
        return float(self.user_embeddings[user] @ self.service_embeddings[service])

    def predict_pairs(self, users: np.ndarray, services: np.ndarray) -> np.ndarray:
        return np.einsum(
            "ij,ij->i", self.user_embeddings[users], self.service_embeddings[services]
        )


def train_mhgat(
    train: QosMatrix,
    val: QosMatrix,
    f0: np.ndarray,
    model_config: MhGatConfig,
    train_config: TrainConfig,
    gamma: float,
    loss: str = "cauchy",
) -> TrainedMhGat:
    """Same contract as the graph-convolution trainer, attention flavored."""
    if train.observed_count == 0:
        raise ValueError("training matrix has no observed entries")
    n = train.n_users
    tgt, src = adjacency_edges(train)
    loss_fn, loss_grad = LOSSES[loss]

    tr_rows, tr_cols = train.observed_indices()
    tr_vals = train.values[tr_rows, tr_cols]
    va_rows, va_cols = val.observed_indices()
    va_vals = val.values[va_rows, va_cols]
    if va_vals.size == 0:
        va_rows, va_cols, va_vals = tr_rows, tr_cols, tr_vals

    model = MhGatModel(model_config)
    from .nn import make_optimizer

    optimizer = make_optimizer(train_config.optimizer, model.params(), train_config.learning_rate)
    shape = (train.n_users, train.n_services)

    def epoch_fn():
        model.zero_grad()
        e = model.forward(f0, tgt, src)
        e_u, e_s = e[:n], e[n:]
        preds = np.einsum("ij,ij->i", e_u[tr_rows], e_s[tr_cols])
        value = loss_fn(tr_vals, preds, gamma)
        g = loss_grad(tr_vals, preds, gamma)
        grad_mat = sp.coo_matrix((g, (tr_rows, tr_cols)), shape=shape).tocsr()
        de = np.vstack([grad_mat @ e_s, grad_mat.T @ e_u])
        model.backward(de)
        optimizer.step()
        return value

    def val_fn():
        e = model.forward(f0, tgt, src)
        preds = np.einsum("ij,ij->i", e[:n][va_rows], e[n:][va_cols])
        return loss_fn(va_vals, preds, gamma)

    result = train_loop(epoch_fn, val_fn, model.params(), train_config)
    e = model.forward(f0, tgt, src)
    return TrainedMhGat(
        model=model,
        user_embeddings=e[:n].copy(),
        service_embeddings=e[n:].copy(),
        gamma=gamma,
        training=result,
    )
