"""Initial node features for the invocation graph.

Every user and service gets one row built from four blocks:

* 5 statistical features of its invocation vector (min, max, mean, median,
  population std over observed entries; all zero for cold entities),
* collaborative features from a masked non-negative matrix factorization,
* similarity features (cosine rows compressed by an autoencoder),
* contextual features (one-hot id/region/group compressed by an autoencoder).

The assembled matrix is min-max scaled per column so seconds, factor values
and binary codes share a [0, 1] range before training.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .data import ContextTable, DimensionError, QosMatrix


@dataclass(frozen=True)
class StatFeatures:
    min: float
    max: float
    mean: float
    median: float
    std: float

    def as_array(self) -> np.ndarray:
        return np.array([self.min, self.max, self.mean, self.median, self.std])


def statistical_features(values: np.ndarray, mask: np.ndarray) -> StatFeatures:
    """Five summary statistics over the observed entries of one QIV.

    A cold entity (no observations) gets all zeros.
    """
    observed = np.asarray(values, dtype=float)[np.asarray(mask, dtype=bool)]
    if observed.size == 0:
        return StatFeatures(0.0, 0.0, 0.0, 0.0, 0.0)
    return StatFeatures(
        min=float(observed.min()),
        max=float(observed.max()),
        mean=float(observed.mean()),
        median=float(np.median(observed)),
        std=float(observed.std()),  # population std
    )


def stat_feature_matrix(train: QosMatrix) -> np.ndarray:
    """(n + m) x 5 statistics: users (rows of Q) then services (columns)."""
    rows = [statistical_features(train.values[i], train.mask[i]).as_array()
            for i in range(train.n_users)]
    cols = [statistical_features(train.values[:, j], train.mask[:, j]).as_array()
            for j in range(train.n_services)]
    return np.vstack(rows + cols)


# ---------------------------------------------------------------------------
# collaborative features: masked NMF


@dataclass(frozen=True)
class NmfFactors:
    user_factors: np.ndarray  # n x d, nonnegative
    service_factors: np.ndarray  # m x d, nonnegative

    def __post_init__(self):
        if np.any(self.user_factors < 0) or np.any(self.service_factors < 0):
            raise ValueError("NMF factors must be nonnegative")


def nmf_objective(train: QosMatrix, w: np.ndarray, h: np.ndarray) -> float:
    """Squared reconstruction error over observed entries only."""
    diff = (train.values - w @ h.T)[train.mask]
    return float((diff * diff).sum())


def nmf_decompose(
    train: QosMatrix,
    d: int,
    max_iters: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
) -> NmfFactors:
    """Masked NMF by multiplicative updates restricted to observed entries.

    The masked objective is non-increasing under these updates.  Rows or
    columns with no observations keep zero factors (their reconstruction is
    unconstrained, so anything else would be an arbitrary guess).
    """
    n, m = train.n_users, train.n_services
    if d > min(n, m):
        raise ValueError(f"factor rank {d} exceeds min(n, m) = {min(n, m)}")
    mask = train.mask.astype(float)
    q = train.values

    if not train.mask.any():
        warnings.warn("NMF on an all-empty matrix: returning zero factors")
        return NmfFactors(np.zeros((n, d)), np.zeros((m, d)))

    rng = np.random.default_rng(seed)
    scale = np.sqrt(q[train.mask].mean() / d)
    w = rng.uniform(0.1, 1.0, size=(n, d)) * scale
    h = rng.uniform(0.1, 1.0, size=(m, d)) * scale

    live_rows = train.mask.any(axis=1)
    live_cols = train.mask.any(axis=0)
    w[~live_rows] = 0.0
    h[~live_cols] = 0.0

    eps = 1e-12
    prev = nmf_objective(train, w, h)
    for _ in range(max_iters):
        wh = mask * (w @ h.T)
        w *= ((mask * q) @ h) / np.maximum(wh @ h, eps)
        wh = mask * (w @ h.T)
        h *= ((mask * q).T @ w) / np.maximum(wh.T @ w, eps)
        current = nmf_objective(train, w, h)
        if prev - current <= tol * max(prev, eps):
            prev = current
            break
        prev = current
    return NmfFactors(user_factors=w, service_factors=h)


# ---------------------------------------------------------------------------
# similarity features


def cosine_similarity(train: QosMatrix, axis: str = "user") -> np.ndarray:
    """Pairwise cosine similarity of QIVs with unobserved entries as zero.

    Entities with disjoint invocation supports get similarity 0, as does any
    pair involving an empty QIV.
    """
    if axis == "user":
        v = train.values
    elif axis == "service":
        v = train.values.T
    else:
        raise ValueError(f"axis must be 'user' or 'service', got {axis!r}")
    norms = np.linalg.norm(v, axis=1)
    sim = v @ v.T
    denom = np.outer(norms, norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, sim / np.where(denom > 0, denom, 1.0), 0.0)
    return sim


# ---------------------------------------------------------------------------
# contextual features


def onehot_context(context: ContextTable) -> np.ndarray:
    """One-hot blocks for (identity, region, group), concatenated.

    Width is n_entities + n_regions + n_groups; each block has exactly one 1.
    """
    n = len(context)
    out = np.zeros((n, context.onehot_width))
    out[np.arange(n), np.arange(n)] = 1.0
    out[np.arange(n), n + context.region] = 1.0
    out[np.arange(n), n + context.n_regions + context.group] = 1.0
    return out


# ---------------------------------------------------------------------------
# assembled embedding


@dataclass(frozen=True)
class FeatureEmbedding:
    """Stacked per-node features: users first, then services.

    ``block_widths`` records the (stat, collaborative, similarity,
    contextual) split; ``scale_min``/``scale_range`` are the per-column
    min-max parameters that were applied.
    """

    matrix: np.ndarray  # (n + m) x f
    n_users: int
    block_widths: tuple[int, int, int, int]
    scale_min: np.ndarray
    scale_range: np.ndarray

    @property
    def n_services(self) -> int:
        return self.matrix.shape[0] - self.n_users

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def user_rows(self) -> np.ndarray:
        return self.matrix[: self.n_users]

    def service_rows(self) -> np.ndarray:
        return self.matrix[self.n_users:]

    def block(self, name: str) -> np.ndarray:
        names = ("stat", "collaborative", "similarity", "contextual")
        if name not in names:
            raise ValueError(f"unknown block {name!r}")
        start = sum(self.block_widths[: names.index(name)])
        return self.matrix[:, start : start + self.block_widths[names.index(name)]]


def assemble_embedding(
    stat: np.ndarray,
    collaborative: np.ndarray,
    similarity: np.ndarray,
    contextual: np.ndarray,
    n_users: int,
    scale: bool = True,
) -> FeatureEmbedding:
    """Concatenate the four (n + m)-row blocks and min-max scale per column."""
    blocks = [np.asarray(b, dtype=float) for b in (stat, collaborative, similarity, contextual)]
    n_rows = blocks[0].shape[0]
    for b in blocks:
        if b.ndim != 2 or b.shape[0] != n_rows:
            raise DimensionError(
                f"feature blocks must share a row count: {[b.shape for b in blocks]}"
            )
    if blocks[0].shape[1] != 5:
        raise DimensionError(f"statistics block must be 5 wide, got {blocks[0].shape[1]}")
    if not 0 <= n_users <= n_rows:
        raise DimensionError("n_users out of range for the stacked blocks")
    matrix = np.hstack(blocks)
    if scale:
        lo = matrix.min(axis=0)
        rng = matrix.max(axis=0) - lo
        safe = np.where(rng > 0, rng, 1.0)
        matrix = (matrix - lo) / safe
    else:
        lo = np.zeros(matrix.shape[1])
        rng = np.ones(matrix.shape[1])
    return FeatureEmbedding(
        matrix=matrix,
        n_users=n_users,
        block_widths=tuple(b.shape[1] for b in blocks),
        scale_min=np.asarray(lo, dtype=float),
        scale_range=np.asarray(rng, dtype=float),
    )


def save_embedding(embedding: FeatureEmbedding, data_path, sidecar_path) -> None:
    """Row-major float64 binary plus a JSON sidecar with dims and scaling."""
    embedding.matrix.astype("<f8").tofile(data_path)
    sidecar = {
        "shape": list(embedding.matrix.shape),
        "n_users": embedding.n_users,
        "block_widths": list(embedding.block_widths),
        "scale_min": embedding.scale_min.tolist(),
        "scale_range": embedding.scale_range.tolist(),
        "dtype": "<f8",
        "order": "row-major",
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)


def load_embedding(data_path, sidecar_path) -> FeatureEmbedding:
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    matrix = np.fromfile(data_path, dtype="<f8").reshape(sidecar["shape"])
    return FeatureEmbedding(
        matrix=matrix,
        n_users=sidecar["n_users"],
        block_widths=tuple(sidecar["block_widths"]),
        scale_min=np.asarray(sidecar["scale_min"], dtype=float),
        scale_range=np.asarray(sidecar["scale_range"], dtype=float),
    )
