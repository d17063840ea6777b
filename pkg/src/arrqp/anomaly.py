"""Grey-sheep and outlier detection over a training QoS matrix.

Grey sheep are entities whose invocations deviate strongly from the
additive "own mean + trimmed counterpart mean" pattern of the majority.
Each deviation is weighted by the reliability of the counterpart (one minus
its min-max-normalized QIV standard deviation), and an entity is flagged
when its mean weighted deviation exceeds mean + c * std of all scores on
its side.  Cold entities score zero: the measure only looks at an entity's
own invocations, so sparsity elsewhere cannot contaminate it.

Outliers are individual observed entries scored by an isolation forest and
removed top-down at a configurable ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import QosMatrix


@dataclass(frozen=True)
class ReliabilityScores:
    user_scores: np.ndarray  # in [0, 1]
    service_scores: np.ndarray


@dataclass(frozen=True)
class GaScores:
    user_scores: np.ndarray  # >= 0
    service_scores: np.ndarray


@dataclass(frozen=True)
class GreysheepReport:
    c: float
    user_threshold: float
    service_threshold: float
    gsu: tuple[int, ...]
    gss: tuple[int, ...]
    user_scores: np.ndarray
    service_scores: np.ndarray

    def to_json(self) -> dict:
        return {
            "c": self.c,
            "user_threshold": self.user_threshold,
            "service_threshold": self.service_threshold,
            "greysheep_users": list(self.gsu),
            "greysheep_services": list(self.gss),
            "user_scores": self.user_scores.tolist(),
            "service_scores": self.service_scores.tolist(),
        }


@dataclass(frozen=True)
class OutlierReport:
    rows: np.ndarray  # observed-entry coordinates, aligned with scores
    cols: np.ndarray
    scores: np.ndarray
    removed: tuple[tuple[int, int], ...]
    removed_fraction: float

    def to_json(self) -> dict:
        return {
            "lambda": self.removed_fraction,
            "n_scored": int(self.scores.size),
            "removed": [list(c) for c in self.removed],
            "scores": [
                [int(i), int(j), float(s)]
                for i, j, s in zip(self.rows, self.cols, self.scores)
            ],
        }


def _qiv_std(values: np.ndarray, mask: np.ndarray, axis_user: bool) -> np.ndarray:
    """Population std of each row (users) or column (services); cold -> 0."""
    v = values if axis_user else values.T
    m = mask if axis_user else mask.T
    out = np.zeros(v.shape[0])
    for k in range(v.shape[0]):
        obs = v[k][m[k]]
        if obs.size:
            out[k] = obs.std()
    return out


def _minmax_reliability(sigma: np.ndarray) -> np.ndarray:
    lo, hi = sigma.min(), sigma.max()
    if hi == lo:
        return np.ones_like(sigma)  # all equally reliable
    return 1.0 - (sigma - lo) / (hi - lo)


def reliability_scores(train: QosMatrix) -> ReliabilityScores:
    """One minus the min-max-normalized QIV standard deviation, per side."""
    user_sigma = _qiv_std(train.values, train.mask, axis_user=True)
    service_sigma = _qiv_std(train.values, train.mask, axis_user=False)
    return ReliabilityScores(
        user_scores=_minmax_reliability(user_sigma),
        service_scores=_minmax_reliability(service_sigma),
    )


def _trimmed_means(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-column mean with one max and one min observation excluded.

    Columns with fewer than 3 observations fall back to the plain mean
    (the trimmed form divides by count - 2); empty columns give 0.
    """
    m = values.shape[1]
    out = np.zeros(m)
    for j in range(m):
        obs = values[:, j][mask[:, j]]
        if obs.size == 0:
            continue
        if obs.size > 2:
            out[j] = (obs.sum() - obs.max() - obs.min()) / (obs.size - 2)
        else:
            out[j] = obs.mean()
    return out


def ga_scores(train: QosMatrix, reliability: ReliabilityScores | None = None) -> GaScores:
    """Mean reliability-weighted deviation of each entity's invocations.

    For user i: mean over invoked services j of
    |q_ij - mean(QIV_i) - trimmed_mean(column j)| * reliability(s_j),
    and symmetrically for services.  Entities with no invocations score 0.
    """
    if reliability is None:
        reliability = reliability_scores(train)
    values, mask = train.values, train.mask
    n, m = train.n_users, train.n_services

    user_mean = np.zeros(n)
    for i in range(n):
        obs = values[i][mask[i]]
        if obs.size:
            user_mean[i] = obs.mean()
    service_mean = np.zeros(m)
    for j in range(m):
        obs = values[:, j][mask[:, j]]
        if obs.size:
            service_mean[j] = obs.mean()

    service_trimmed = _trimmed_means(values, mask)
    user_trimmed = _trimmed_means(values.T, mask.T)

    user_scores = np.zeros(n)
    for i in range(n):
        cols = np.nonzero(mask[i])[0]
        if cols.size == 0:
            continue
        dev = np.abs(values[i, cols] - user_mean[i] - service_trimmed[cols])
        user_scores[i] = (dev * reliability.service_scores[cols]).sum() / cols.size

    service_scores = np.zeros(m)
    for j in range(m):
        rows = np.nonzero(mask[:, j])[0]
        if rows.size == 0:
            continue
        dev = np.abs(values[rows, j] - service_mean[j] - user_trimmed[rows])
        service_scores[j] = (dev * reliability.user_scores[rows]).sum() / rows.size

    return GaScores(user_scores=user_scores, service_scores=service_scores)


def detect_greysheep(ga: GaScores, c: float) -> GreysheepReport:
    """Flag entities whose GA score exceeds mean + c * population std."""
    tau_u = float(ga.user_scores.mean() + c * ga.user_scores.std())
    tau_s = float(ga.service_scores.mean() + c * ga.service_scores.std())
    gsu = tuple(int(i) for i in np.nonzero(ga.user_scores > tau_u)[0])
    gss = tuple(int(j) for j in np.nonzero(ga.service_scores > tau_s)[0])
    return GreysheepReport(
        c=c,
        user_threshold=tau_u,
        service_threshold=tau_s,
        gsu=gsu,
        gss=gss,
        user_scores=ga.user_scores,
        service_scores=ga.service_scores,
    )


# ---------------------------------------------------------------------------
# isolation forest


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "size", "depth")

    def __init__(self, feature=-1, threshold=0.0, left=None, right=None, size=0, depth=0):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.size = size
        self.depth = depth


def _avg_path_length(size: int) -> float:
    """Expected unsuccessful-search path length in a BST of ``size`` points."""
    if size <= 1:
        return 0.0
    if size == 2:
        return 1.0
    h = math.log(size - 1) + 0.5772156649015329
    return 2.0 * h - 2.0 * (size - 1) / size


def _grow_tree(x: np.ndarray, depth: int, max_depth: int, rng: np.random.Generator) -> _Node:
    n = x.shape[0]
    if depth >= max_depth or n <= 1 or np.all(x == x[0]):
        return _Node(size=n, depth=depth)
    feature = int(rng.integers(x.shape[1]))
    lo, hi = x[:, feature].min(), x[:, feature].max()
    if lo == hi:
        # constant on this draw; try the spread features instead
        spread = np.nonzero(x.min(axis=0) < x.max(axis=0))[0]
        if spread.size == 0:
            return _Node(size=n, depth=depth)
        feature = int(rng.choice(spread))
        lo, hi = x[:, feature].min(), x[:, feature].max()
    threshold = rng.uniform(lo, hi)
    go_left = x[:, feature] < threshold
    if not go_left.any() or go_left.all():
        return _Node(size=n, depth=depth)
    return _Node(
        feature=feature,
        threshold=threshold,
        left=_grow_tree(x[go_left], depth + 1, max_depth, rng),
        right=_grow_tree(x[~go_left], depth + 1, max_depth, rng),
        size=n,
        depth=depth,
    )


def _path_length(node: _Node, row: np.ndarray) -> float:
    depth = 0
    while node.feature >= 0:
        node = node.left if row[node.feature] < node.threshold else node.right
        depth += 1
    return depth + _avg_path_length(node.size)


class IsolationForest:
    """Ensemble of random isolation trees; higher score = more anomalous.

    Scores are 2^(-E[path length] / c(subsample)), in (0, 1].  Tree seeds
    are spawned from the master seed so the forest is reproducible and each
    tree could be grown independently.
    """

    def __init__(self, n_trees: int = 100, subsample_size: int = 256, seed: int = 0,
                 max_depth: int | None = None):
        self.n_trees = n_trees
        self.subsample_size = subsample_size
        self.seed = seed
        self.max_depth = max_depth
        self.trees: list[_Node] = []
        self._c = 1.0

    def fit(self, points: np.ndarray) -> "IsolationForest":
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if x.shape[0] < 2:
            raise ValueError("need at least 2 points to grow a forest")
        psi = min(self.subsample_size, x.shape[0])
        depth_cap = self.max_depth if self.max_depth is not None else math.ceil(math.log2(psi))
        self._c = max(_avg_path_length(psi), 1e-12)
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            sample = x[rng.choice(x.shape[0], size=psi, replace=False)]
            self.trees.append(_grow_tree(sample, 0, depth_cap, rng))
        return self

    def score(self, points: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise RuntimeError("fit the forest before scoring")
        x = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(x.shape[0])
        for k, row in enumerate(x):
            mean_path = np.mean([_path_length(t, row) for t in self.trees])
            out[k] = 2.0 ** (-mean_path / self._c)
        return out


def isolation_forest_scores(points: np.ndarray, n_trees: int = 100,
                            subsample_size: int = 256, seed: int = 0) -> np.ndarray:
    """Fit-and-score convenience wrapper."""
    forest = IsolationForest(n_trees=n_trees, subsample_size=subsample_size, seed=seed)
    return forest.fit(points).score(points)


def entry_features(train: QosMatrix, raw_only: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature vector per observed entry for outlier scoring.

    Default is [q_ij, q_ij - row mean, q_ij - column mean]; residuals make
    per-entry outliers separable from merely slow users or services.
    """
    rows, cols = train.observed_indices()
    q = train.values[rows, cols]
    if raw_only:
        return np.column_stack([q]), rows, cols
    user_mean = np.zeros(train.n_users)
    for i in range(train.n_users):
        obs = train.values[i][train.mask[i]]
        if obs.size:
            user_mean[i] = obs.mean()
    service_mean = np.zeros(train.n_services)
    for j in range(train.n_services):
        obs = train.values[:, j][train.mask[:, j]]
        if obs.size:
            service_mean[j] = obs.mean()
    feats = np.column_stack([q, q - user_mean[rows], q - service_mean[cols]])
    return feats, rows, cols


def score_outliers(train: QosMatrix, n_trees: int = 100, subsample_size: int = 256,
                   seed: int = 0, raw_only: bool = False) -> OutlierReport:
    """Score every observed entry; the removal set stays empty until chosen."""
    feats, rows, cols = entry_features(train, raw_only=raw_only)
    scores = isolation_forest_scores(
        feats, n_trees=n_trees, subsample_size=subsample_size, seed=seed
    )
    return OutlierReport(rows=rows, cols=cols, scores=scores, removed=(), removed_fraction=0.0)


def remove_outliers(train: QosMatrix, report: OutlierReport, lam: float) -> tuple[QosMatrix, OutlierReport]:
    """Drop the top floor(lam * observed) scored entries from the matrix.

    Ties break deterministically by (score desc, user idx, service idx).
    """
    if not 0 <= lam < 1:
        raise ValueError("lambda must lie in [0, 1)")
    n_remove = int(math.floor(lam * report.scores.size + 1e-9))
    if n_remove == 0:
        return train, OutlierReport(
            rows=report.rows, cols=report.cols, scores=report.scores,
            removed=(), removed_fraction=lam,
        )
    order = np.lexsort((report.cols, report.rows, -report.scores))
    chosen = order[:n_remove]
    mask = train.mask.copy()
    mask[report.rows[chosen], report.cols[chosen]] = False
    removed = tuple(sorted(
        (int(report.rows[k]), int(report.cols[k])) for k in chosen
    ))
    cleaned = QosMatrix(values=np.where(mask, train.values, 0.0), mask=mask)
    return cleaned, OutlierReport(
        rows=report.rows, cols=report.cols, scores=report.scores,
        removed=removed, removed_fraction=lam,
    )
