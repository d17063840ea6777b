"""Multi-head graph-convolution matrix factorization.

Each graph-convolution unit performs two rounds of normalized-adjacency
aggregation: relu(A @ relu(A @ F @ W1) @ W2), producing a 64-wide map.  A
block runs several such heads on the same input, stacks their outputs as
channels and mixes them with a single 1x1 filter; blocks are chained, their
outputs stacked again, and a final 1x1 filter yields the node embeddings.
Rows split at the user count into the user/service embedding matrices whose
dot products are the predicted QoS values.  Training minimizes the Cauchy
loss over observed pairs with Adam and patience-based early stopping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import QosMatrix
from .nn import (
    Conv1x1,
    Dense,
    Parameter,
    TrainConfig,
    TrainResult,
    glorot_uniform,
    relu,
    train_loop,
)
from .nn.losses import LOSSES


@dataclass(frozen=True)
class MhGcmfConfig:
    in_dim: int
    n_heads: int = 1
    n_blocks: int = 2  # t
    hidden_dim: int = 128
    embed_dim: int = 64
    dense_mode: str = "identity_pretransform"  # or "per_head"
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_heads <= 8:
            raise ValueError("head count must lie in 1..8")
        if self.n_blocks < 1:
            raise ValueError("need at least one block")
        if self.dense_mode not in ("identity_pretransform", "per_head"):
            raise ValueError(f"unknown dense mode {self.dense_mode!r}")


class GraphConvUnit:
    """relu(A @ relu(A @ F @ W1) @ W2): a two-round neighborhood aggregator."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 rng: np.random.Generator, name: str = "gcmfu"):
        self.w1 = Parameter(glorot_uniform(rng, in_dim, hidden_dim), f"{name}.w1")
        self.w2 = Parameter(glorot_uniform(rng, hidden_dim, out_dim), f"{name}.w2")
        self._cache = None

    def params(self) -> list[Parameter]:
        return [self.w1, self.w2]

    def forward(self, a_hat, f: np.ndarray) -> np.ndarray:
        if f.shape[1] != self.w1.value.shape[0]:
            raise ValueError(
                f"feature width {f.shape[1]} does not match W1 {self.w1.value.shape}"
            )
        pre1 = a_hat @ (f @ self.w1.value)
        z1 = relu(pre1)
        pre2 = a_hat @ (z1 @ self.w2.value)
        self._cache = (a_hat, f, pre1, z1, pre2)
        return relu(pre2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        a_hat, f, pre1, z1, pre2 = self._cache
        dpre2 = dout * (pre2 > 0)
        agg2 = a_hat.T @ dpre2
        self.w2.grad += z1.T @ agg2
        dz1 = agg2 @ self.w2.value.T
        dpre1 = dz1 * (pre1 > 0)
        agg1 = a_hat.T @ dpre1
        self.w1.grad += f.T @ agg1
        return agg1 @ self.w1.value.T


class _Block:
    def __init__(self, in_dim: int, config: MhGcmfConfig, rng, per_head_dense: bool, tag: str):
        self.head_dense = None
        unit_in = in_dim
        if per_head_dense:
            self.head_dense = [
                Dense(in_dim, config.hidden_dim, rng, name=f"{tag}.dense{h}")
                for h in range(config.n_heads)
            ]
            unit_in = config.hidden_dim
        self.units = [
            GraphConvUnit(unit_in, config.hidden_dim, config.embed_dim, rng,
                          name=f"{tag}.head{h}")
            for h in range(config.n_heads)
        ]
        self.conv = Conv1x1(config.n_heads, rng, name=f"{tag}.conv")

    def params(self):
        out = []
        if self.head_dense:
            for d in self.head_dense:
                out.extend(d.params())
        for u in self.units:
            out.extend(u.params())
        out.extend(self.conv.params())
        return out


class MhGcmfModel:
    """The stacked multi-head graph-convolution network."""

    def __init__(self, config: MhGcmfConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.pre = None
        per_head = config.dense_mode == "per_head"
        block_in = config.in_dim
        if not per_head:
            self.pre = Dense(config.in_dim, config.in_dim, rng, init="identity", name="pre")
        self.blocks = []
        for k in range(config.n_blocks):
            self.blocks.append(
                _Block(block_in, config, rng, per_head_dense=per_head and k == 0, tag=f"block{k}")
            )
            block_in = config.embed_dim
        self.final_conv = Conv1x1(config.n_blocks, rng, name="final.conv")
        self._cache = None

    def params(self) -> list[Parameter]:
        out = [] if self.pre is None else self.pre.params()
        for b in self.blocks:
            out = out + b.params()
        return out + self.final_conv.params()

    def forward(self, a_hat, f0: np.ndarray) -> np.ndarray:
        x = self.pre.forward(f0) if self.pre is not None else f0
        block_outs = []
        for block in self.blocks:
            head_outs = []
            for h, unit in enumerate(block.units):
                inp = block.head_dense[h].forward(x) if block.head_dense else x
                head_outs.append(unit.forward(a_hat, inp))
            x = block.conv.forward(np.stack(head_outs))
            block_outs.append(x)
        return self.final_conv.forward(np.stack(block_outs))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dblocks = self.final_conv.backward(dout)  # (t, N, 64)
        dnext = np.zeros_like(dblocks[-1])
        dx = None
        for k in reversed(range(len(self.blocks))):
            block = self.blocks[k]
            dblock_out = dblocks[k] + dnext
            dstack = block.conv.backward(dblock_out)
            dx = None
            for h in reversed(range(len(block.units))):
                dh = block.units[h].backward(dstack[h])
                if block.head_dense:
                    dh = block.head_dense[h].backward(dh)
                dx = dh if dx is None else dx + dh
            dnext = dx
        return self.pre.backward(dx) if self.pre is not None else dx

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            p.value = np.asarray(state[p.name], dtype=float).reshape(p.value.shape)


@dataclass
class TrainedSorrqp:
    """Learned embeddings plus the model that produced them."""

    model: MhGcmfModel
    user_embeddings: np.ndarray  # n x 64
    service_embeddings: np.ndarray  # m x 64
    gamma: float
    loss_name: str
    training: TrainResult
    _qhat: np.ndarray | None = field(default=None, repr=False)

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

    def predicted_matrix(self) -> np.ndarray:
        if self._qhat is None:
            self._qhat = self.user_embeddings @ self.service_embeddings.T
        return self._qhat


def _pair_arrays(matrix: QosMatrix):
    rows, cols = matrix.observed_indices()
    return rows, cols, matrix.values[rows, cols]


def train_sorrqp(
    train: QosMatrix,
    val: QosMatrix,
    f0: np.ndarray,
    a_hat,
    model_config: MhGcmfConfig,
    train_config: TrainConfig,
    gamma: float,
    loss: str = "cauchy",
) -> TrainedSorrqp:
    """Fit the model to the observed training pairs.

    Validation pairs drive early stopping; the best-validation epoch's
    parameters produce the returned embeddings.
    """
    if train.observed_count == 0:
        raise ValueError("training matrix has no observed entries")
    n = train.n_users
    loss_fn, loss_grad = LOSSES[loss]
    tr_rows, tr_cols, tr_vals = _pair_arrays(train)
    va_rows, va_cols, va_vals = _pair_arrays(val)
    if va_vals.size == 0:  # fall back to training loss for stopping
        va_rows, va_cols, va_vals = tr_rows, tr_cols, tr_vals

    model = MhGcmfModel(model_config)
    from .nn import make_optimizer

    optimizer = make_optimizer(train_config.optimizer, model.params(), train_config.learning_rate)
    shape = (train.n_users, train.n_services)

    def epoch_fn():
        model.zero_grad()
        e = model.forward(a_hat, f0)
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
        e = model.forward(a_hat, f0)
        preds = np.einsum("ij,ij->i", e[:n][va_rows], e[n:][va_cols])
        return loss_fn(va_vals, preds, gamma)

    result = train_loop(epoch_fn, val_fn, model.params(), train_config)
    e = model.forward(a_hat, f0)
    return TrainedSorrqp(
        model=model,
        user_embeddings=e[:n].copy(),
        service_embeddings=e[n:].copy(),
        gamma=gamma,
        loss_name=loss,
        training=result,
    )
