"""Bipartite invocation graph and its normalized adjacency matrix.

Nodes 0..n-1 are users, n..n+m-1 are services.  An edge connects user i and
service j whenever the training matrix observes the pair.  Self-loops are
always present so every node keeps its own features during aggregation, and
the symmetric normalization D^{-1/2} A D^{-1/2} removes the degree-scaling
discrepancy caused by sparsity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import QosMatrix


@dataclass(frozen=True)
class Qig:
    """Invocation graph: edge set over the user/service bipartition."""

    n_users: int
    n_services: int
    edges: tuple[tuple[int, int], ...]  # (user index, service index), sorted

    def __post_init__(self):
        for u, s in self.edges:
            if not (0 <= u < self.n_users and 0 <= s < self.n_services):
                raise ValueError(f"edge ({u}, {s}) out of range")

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_services


def build_qig(train: QosMatrix) -> Qig:
    rows, cols = train.observed_indices()
    edges = tuple(sorted((int(i), int(j)) for i, j in zip(rows, cols)))
    return Qig(n_users=train.n_users, n_services=train.n_services, edges=edges)


def build_adjacency(train: QosMatrix, sparse: bool | None = None) -> sp.csr_matrix | np.ndarray:
    """Binary adjacency with self-loops over the n+m node set.

    a[i, j] = 1 iff i == j or (i, j) is an observed training invocation in
    either orientation.  Returns a dense array for small graphs and CSR for
    larger ones unless ``sparse`` forces a representation.
    """
    n, m = train.n_users, train.n_services
    big_n = n + m
    rows, cols = train.observed_indices()
    i = np.concatenate([np.arange(big_n), rows, cols + n])
    j = np.concatenate([np.arange(big_n), cols + n, rows])
    data = np.ones(i.size)
    a = sp.coo_matrix((data, (i, j)), shape=(big_n, big_n)).tocsr()
    a.data[:] = 1.0  # coo duplicates would sum; edges are unique but be safe
    if sparse is None:
        sparse = big_n > 2000
    return a if sparse else a.toarray()


def normalize(a) -> sp.csr_matrix | np.ndarray:
    """Symmetric degree normalization D^{-1/2} A D^{-1/2}.

    Self-loops guarantee every degree is positive; a zero-degree row would
    mean the adjacency was built incorrectly.
    """
    if sp.issparse(a):
        degrees = np.asarray(a.sum(axis=1)).ravel()
    else:
        degrees = np.asarray(a).sum(axis=1)
    if np.any(degrees <= 0):
        raise AssertionError("zero-degree node: adjacency must carry self-loops")
    inv_sqrt = 1.0 / np.sqrt(degrees)
    if sp.issparse(a):
        d = sp.diags(inv_sqrt)
        return (d @ a @ d).tocsr()
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def export_adjacency(a, path) -> None:
    """Write the (i, j, value) coordinate list, row-major, for inspection."""
    coo = sp.coo_matrix(a)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}\n")
