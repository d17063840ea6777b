"""QoS datasets: loading, synthetic generation and train/val/test splitting.

A QoS log is an n x m matrix of strictly positive measurements (response
time in seconds or throughput in kbps) with most entries missing.  Entries
that are zero or negative (WS-DREAM writes -1 for failed invocations) are
treated as unobserved everywhere downstream.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np


class DataFormatError(ValueError):
    """Malformed input file (ragged rows, unparseable numbers, bad header)."""


class DimensionError(ValueError):
    """Row/column counts of related inputs do not line up."""


class GenerationError(ValueError):
    """A synthetic dataset request cannot be satisfied (e.g. empty category)."""


@dataclass(frozen=True)
class QosMatrix:
    """Partially observed positive-valued QoS matrix.

    ``values`` is dense with zeros at unobserved cells; ``mask`` marks the
    observed cells.  Every observed value is strictly positive.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 2:
            raise DimensionError(
                f"values {values.shape} and mask {mask.shape} must be equal 2-d shapes"
            )
        if np.any(values[mask] <= 0):
            raise ValueError("observed QoS values must be strictly positive")
        values = np.where(mask, values, 0.0)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_services(self) -> int:
        return self.values.shape[1]

    @property
    def observed_count(self) -> int:
        return int(self.mask.sum())

    def observed_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Row/column index arrays of observed cells, in row-major order."""
        return np.nonzero(self.mask)


@dataclass(frozen=True)
class ContextTable:
    """Categorical context for one side of the invocation matrix.

    ``region`` and ``group`` are integer codes built by first occurrence;
    group is the autonomous system for users and the provider for services.
    """

    entity_kind: str  # "user" | "service"
    ids: tuple[str, ...]
    region: np.ndarray
    group: np.ndarray
    n_regions: int
    n_groups: int

    def __post_init__(self):
        if self.entity_kind not in ("user", "service"):
            raise ValueError(f"unknown entity kind {self.entity_kind!r}")
        region = np.asarray(self.region, dtype=int)
        group = np.asarray(self.group, dtype=int)
        if not (len(self.ids) == region.size == group.size):
            raise DimensionError("context columns must have one row per entity")
        if region.size and (region.max(initial=-1) >= self.n_regions or region.min(initial=0) < 0):
            raise ValueError("region code out of range")
        if group.size and (group.max(initial=-1) >= self.n_groups or group.min(initial=0) < 0):
            raise ValueError("group code out of range")
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "group", group)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def onehot_width(self) -> int:
        return len(self.ids) + self.n_regions + self.n_groups


@dataclass(frozen=True)
class SplitSpec:
    """x% of the observed entries for training, 20% of those for validation."""

    train_fraction: float
    validation_fraction_of_train: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 100:
            raise ValueError("train_fraction must be in (0, 100)")
        if not 0 <= self.validation_fraction_of_train < 100:
            raise ValueError("validation_fraction_of_train must be in [0, 100)")


@dataclass(frozen=True)
class Dataset:
    matrix: QosMatrix
    user_context: ContextTable
    service_context: ContextTable
    parameter_kind: str = "RT"  # "RT" | "TP"

    def __post_init__(self):
        if self.parameter_kind not in ("RT", "TP"):
            raise ValueError(f"unknown parameter kind {self.parameter_kind!r}")
        if len(self.user_context) != self.matrix.n_users:
            raise DimensionError(
                f"user context has {len(self.user_context)} rows, matrix has "
                f"{self.matrix.n_users} users"
            )
        if len(self.service_context) != self.matrix.n_services:
            raise DimensionError(
                f"service context has {len(self.service_context)} rows, matrix has "
                f"{self.matrix.n_services} services"
            )


@dataclass(frozen=True)
class GroundTruth:
    """Planted anomalies of a synthetic dataset."""

    outlier_cells: tuple[tuple[int, int], ...] = ()
    greysheep_users: tuple[int, ...] = ()
    cold_users: tuple[int, ...] = ()
    cold_services: tuple[int, ...] = ()


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# loading


def load_matrix(path) -> QosMatrix:
    """Read a plain-text QoS matrix: one row per user, whitespace-separated.

    Entries <= 0 (including the -1 failure sentinel) are unobserved.
    """
    rows: list[list[float]] = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            try:
                row = [float(tok) for tok in fields]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} columns, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: empty matrix file")
    values = np.asarray(rows, dtype=float)
    mask = values > 0
    return QosMatrix(values=np.where(mask, values, 0.0), mask=mask)


def save_matrix(matrix: QosMatrix, path) -> None:
    """Write the plain-text format read by :func:`load_matrix` (-1 = missing)."""
    out = np.where(matrix.mask, matrix.values, -1.0)
    with open(path, "w") as fh:
        for row in out:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def _first_occurrence_codes(labels: list[str]) -> tuple[np.ndarray, int]:
    codes = {}
    out = np.empty(len(labels), dtype=int)
    for i, label in enumerate(labels):
        out[i] = codes.setdefault(label, len(codes))
    return out, len(codes)


def load_context(
    path,
    entity_kind: str,
    id_col: int,
    region_col: int,
    group_col: int,
) -> ContextTable:
    """Read a tab-separated entity list with one header line."""
    ids: list[str] = []
    regions: list[str] = []
    groups: list[str] = []
    needed = max(id_col, region_col, group_col)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 or not line.strip():
                continue  # header
            fields = line.rstrip("\n").split("\t")
            if len(fields) <= needed:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected at least {needed + 1} "
                    f"tab-separated columns, got {len(fields)}"
                )
            ids.append(fields[id_col].strip())
            regions.append(fields[region_col].strip())
            groups.append(fields[group_col].strip())
    region, n_regions = _first_occurrence_codes(regions)
    group, n_groups = _first_occurrence_codes(groups)
    return ContextTable(
        entity_kind=entity_kind,
        ids=tuple(ids),
        region=region,
        group=group,
        n_regions=n_regions,
        n_groups=n_groups,
    )


# Column layout of the WS-DREAM list files: userlist.txt is
# (id, ip, country, ip-no, AS, lat, lon); wslist.txt is
# (id, wsdl, provider, ip, country, ip-no, AS, lat, lon).
WSDREAM_USER_COLUMNS = {"id_col": 0, "region_col": 2, "group_col": 4}
WSDREAM_SERVICE_COLUMNS = {"id_col": 0, "region_col": 4, "group_col": 2}


def load_wsdream(
    matrix_path,
    user_list_path,
    service_list_path,
    parameter_kind: str = "RT",
    user_columns: dict | None = None,
    service_columns: dict | None = None,
) -> Dataset:
    """Load a WS-DREAM-style dataset (matrix + two context list files)."""
    matrix = load_matrix(matrix_path)
    user_context = load_context(
        user_list_path, "user", **(user_columns or WSDREAM_USER_COLUMNS)
    )
    service_context = load_context(
        service_list_path, "service", **(service_columns or WSDREAM_SERVICE_COLUMNS)
    )
    return Dataset(
        matrix=matrix,
        user_context=user_context,
        service_context=service_context,
        parameter_kind=parameter_kind,
    )


# ---------------------------------------------------------------------------
# synthetic data


def _synthetic_context(entity_kind: str, n: int, n_regions: int, n_groups: int, rng) -> ContextTable:
    return ContextTable(
        entity_kind=entity_kind,
        ids=tuple(f"{entity_kind[0]}{i}" for i in range(n)),
        region=rng.integers(0, n_regions, size=n),
        group=rng.integers(0, n_groups, size=n),
        n_regions=n_regions,
        n_groups=n_groups,
    )


def generate_synthetic(
    n: int,
    m: int,
    rank: int,
    density: float,
    noise_std: float = 0.0,
    outlier_fraction: float = 0.0,
    outlier_scale: float = 100.0,
    greysheep_users: int = 0,
    cold_users: int = 0,
    cold_services: int = 0,
    seed: int = 0,
    parameter_kind: str = "RT",
    greysheep_strength: float = 4.0,
    n_regions: int = 4,
    n_groups: int = 6,
) -> tuple[Dataset, GroundTruth]:
    """Generate a low-rank positive QoS matrix with planted anomalies.

    The clean signal is A @ B.T with entrywise-positive factors.  Planted
    outliers multiply chosen observed entries by ``outlier_scale``; planted
    grey-sheep users get an independent per-user offset pattern that breaks
    the additive user+service structure; cold entities have no observed
    entries at all.  Observed count is round(density * n * m), drawn from
    the non-cold cells.
    """
    if rank > min(n, m):
        raise GenerationError(f"rank {rank} exceeds min(n, m) = {min(n, m)}")
    if not 0 <= density <= 1:
        raise GenerationError("density must lie in [0, 1]")
    if not 0 <= outlier_fraction <= 1:
        raise GenerationError("outlier_fraction must lie in [0, 1]")
    if cold_users >= n or cold_services >= m:
        raise GenerationError("cannot make every entity cold")

    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.5, size=(n, rank)) / np.sqrt(rank)
    b = rng.uniform(0.5, 1.5, size=(m, rank)) / np.sqrt(rank)
    values = a @ b.T
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=(n, m))
    values = np.maximum(values, 1e-3)  # observed entries must stay positive

    cold_u = rng.choice(n, size=cold_users, replace=False) if cold_users else np.empty(0, int)
    cold_s = rng.choice(m, size=cold_services, replace=False) if cold_services else np.empty(0, int)

    warm_users = np.setdiff1d(np.arange(n), cold_u)
    warm_services = np.setdiff1d(np.arange(m), cold_s)

    n_observed = _round_half_up(density * n * m)
    n_candidates = warm_users.size * warm_services.size
    if n_observed > n_candidates:
        raise GenerationError(
            f"need {n_observed} observed cells but only {n_candidates} non-cold cells exist"
        )
    mask = np.zeros((n, m), dtype=bool)
    n_placed = 0
    if n_observed >= warm_users.size + warm_services.size:
        # guarantee that only the planted entities are cold: one observation
        # per warm row, then one per still-empty warm column
        for i in warm_users:
            mask[i, rng.choice(warm_services)] = True
        for j in warm_services:
            if not mask[:, j].any():
                mask[rng.choice(warm_users), j] = True
        n_placed = int(mask.sum())
    for flat in rng.permutation(n_candidates):
        if n_placed == n_observed:
            break
        i = warm_users[flat // warm_services.size]
        j = warm_services[flat % warm_services.size]
        if not mask[i, j]:
            mask[i, j] = True
            n_placed += 1

    gs_users = np.empty(0, int)
    if greysheep_users:
        if greysheep_users > warm_users.size:
            raise GenerationError("more grey-sheep users requested than warm users")
        gs_users = rng.choice(warm_users, size=greysheep_users, replace=False)
        # grey-sheep users shift a common half of the services, each by its
        # own magnitude; the half-and-half pattern cannot be absorbed by the
        # additive user+service means, so the deviation score picks it up
        shift_prone = rng.random(m) < 0.5
        for i in gs_users:
            magnitude = rng.uniform(0.5, 1.0) * greysheep_strength
            values[i] = np.maximum(values[i] + magnitude * shift_prone, 1e-3)

    outlier_cells: list[tuple[int, int]] = []
    if outlier_fraction > 0:
        obs_rows, obs_cols = np.nonzero(mask)
        n_outliers = _round_half_up(outlier_fraction * obs_rows.size)
        if n_outliers == 0:
            raise GenerationError(
                "outlier_fraction > 0 but the requested density yields no outlier cells"
            )
        picks = rng.choice(obs_rows.size, size=n_outliers, replace=False)
        for k in picks:
            i, j = int(obs_rows[k]), int(obs_cols[k])
            values[i, j] *= outlier_scale
            outlier_cells.append((i, j))

    values = np.where(mask, values, 0.0)
    matrix = QosMatrix(values=values, mask=mask)
    dataset = Dataset(
        matrix=matrix,
        user_context=_synthetic_context("user", n, n_regions, n_groups, rng),
        service_context=_synthetic_context("service", m, n_regions, n_groups, rng),
        parameter_kind=parameter_kind,
    )
    truth = GroundTruth(
        outlier_cells=tuple(sorted(outlier_cells)),
        greysheep_users=tuple(sorted(int(i) for i in gs_users)),
        cold_users=tuple(sorted(int(i) for i in cold_u)),
        cold_services=tuple(sorted(int(j) for j in cold_s)),
    )
    return dataset, truth


# ---------------------------------------------------------------------------
# splitting


def split(dataset: Dataset, spec: SplitSpec) -> tuple[QosMatrix, QosMatrix, QosMatrix]:
    """Partition the observed entries into train/validation/test matrices.

    |train u val| = round(train_fraction% of observed); validation is
    validation_fraction_of_train% of that.  The three masks are pairwise
    disjoint and union back to the input mask.
    """
    matrix = dataset.matrix
    total = matrix.observed_count
    if total < 5:
        raise ValueError(f"need at least 5 observed entries to split, have {total}")

    rng = np.random.default_rng(spec.seed)
    rows, cols = matrix.observed_indices()
    order = rng.permutation(total)

    n_trainval = _round_half_up(total * spec.train_fraction / 100.0)
    n_val = _round_half_up(n_trainval * spec.validation_fraction_of_train / 100.0)

    val_idx = order[:n_val]
    train_idx = order[n_val:n_trainval]
    test_idx = order[n_trainval:]

    def subset(idx: np.ndarray) -> QosMatrix:
        mask = np.zeros_like(matrix.mask)
        mask[rows[idx], cols[idx]] = True
        return QosMatrix(values=np.where(mask, matrix.values, 0.0), mask=mask)

    return subset(train_idx), subset(val_idx), subset(test_idx)


# ---------------------------------------------------------------------------
# JSON round trip for synthetic datasets


def _context_to_json(ctx: ContextTable) -> dict:
    return {
        "entity_kind": ctx.entity_kind,
        "ids": list(ctx.ids),
        "region": ctx.region.tolist(),
        "group": ctx.group.tolist(),
        "n_regions": ctx.n_regions,
        "n_groups": ctx.n_groups,
    }


def _context_from_json(obj: dict) -> ContextTable:
    return ContextTable(
        entity_kind=obj["entity_kind"],
        ids=tuple(obj["ids"]),
        region=np.asarray(obj["region"], dtype=int),
        group=np.asarray(obj["group"], dtype=int),
        n_regions=obj["n_regions"],
        n_groups=obj["n_groups"],
    )


def save_synthetic(dataset: Dataset, truth: GroundTruth, path) -> None:
    """Serialize a synthetic dataset plus its planted ground truth as JSON."""
    rows, cols = dataset.matrix.observed_indices()
    payload = {
        "n_users": dataset.matrix.n_users,
        "n_services": dataset.matrix.n_services,
        "parameter_kind": dataset.parameter_kind,
        "observed": [
            [int(i), int(j), float(dataset.matrix.values[i, j])]
            for i, j in zip(rows, cols)
        ],
        "user_context": _context_to_json(dataset.user_context),
        "service_context": _context_to_json(dataset.service_context),
        "ground_truth": {
            "outlier_cells": [list(c) for c in truth.outlier_cells],
            "greysheep_users": list(truth.greysheep_users),
            "cold_users": list(truth.cold_users),
            "cold_services": list(truth.cold_services),
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_synthetic(path) -> tuple[Dataset, GroundTruth]:
    with open(path) as fh:
        payload = json.load(fh)
    n, m = payload["n_users"], payload["n_services"]
    values = np.zeros((n, m))
    mask = np.zeros((n, m), dtype=bool)
    for i, j, v in payload["observed"]:
        values[i, j] = v
        mask[i, j] = True
    dataset = Dataset(
        matrix=QosMatrix(values=values, mask=mask),
        user_context=_context_from_json(payload["user_context"]),
        service_context=_context_from_json(payload["service_context"]),
        parameter_kind=payload["parameter_kind"],
    )
    gt = payload["ground_truth"]
    truth = GroundTruth(
        outlier_cells=tuple(tuple(c) for c in gt["outlier_cells"]),
        greysheep_users=tuple(gt["greysheep_users"]),
        cold_users=tuple(gt["cold_users"]),
        cold_services=tuple(gt["cold_services"]),
    )
    return dataset, truth


def summarize(dataset: Dataset) -> dict:
    """Dataset statistics in the shape of the usual benchmark summary table."""
    matrix = dataset.matrix
    observed = matrix.values[matrix.mask]
    if observed.size == 0:
        warnings.warn("summarizing a dataset with no observed entries")
    stats = {
        "n_users": matrix.n_users,
        "n_services": matrix.n_services,
        "n_user_regions": dataset.user_context.n_regions,
        "n_user_groups": dataset.user_context.n_groups,
        "n_service_regions": dataset.service_context.n_regions,
        "n_service_groups": dataset.service_context.n_groups,
        "valid_invocations": matrix.observed_count,
        "parameter_kind": dataset.parameter_kind,
    }
    if observed.size:
        stats.update(
            {
                "min": float(observed.min()),
                "max": float(observed.max()),
                "mean": float(observed.mean()),
                "median": float(np.median(observed)),
                "std": float(observed.std()),
            }
        )
    return stats
