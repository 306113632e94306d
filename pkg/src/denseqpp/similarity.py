"""Pairwise similarity matrices over the top-k of a ranking, and the pruned graph."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from enum import Enum
from typing import IO, Mapping

import numpy as np

from .core import DataError, DenseVector, ScoredRanking, VectorKind, VectorStore


class Provenance(str, Enum):
    SPARSE = "sparse"
    DENSE = "dense"
    ADJUSTED = "adjusted"


@dataclass(frozen=True, eq=False)
class SimMatrix:
    entries: np.ndarray
    doc_ids: tuple[str, ...]
    provenance: Provenance

    def __post_init__(self):
        m = np.array(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise DataError(f"similarity matrix must be square and non-empty, got {m.shape}")
        if m.shape[0] != len(self.doc_ids):
            raise DataError("doc_ids length does not match matrix size")
        if not np.all(np.isfinite(m)):
            raise DataError("similarity matrix has non-finite entries")
        if not np.array_equal(m, m.T):
            raise DataError("similarity matrix is not symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def k(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class PrunedGraph:
    k: int
    adjacency: Mapping[int, frozenset[int]]
    edge_weights: Mapping[tuple[int, int], float]
    threshold: float

    @property
    def num_edges(self) -> int:
        return len(self.edge_weights)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])


def _top_vectors(ranking: ScoredRanking, store: VectorStore, k: int):
    if k < 1:
        raise DataError(f"cutoff must be positive, got {k}")
    ids = ranking.doc_ids[:k]
    missing = [d for d in ids if d not in store]
    if missing:
        raise DataError(f"no vector for top-{k} document {missing[0]!r} of query {ranking.query_id!r}")
    return ids, [store[d] for d in ids]


def build_sim_matrix(
    ranking: ScoredRanking, store: VectorStore, k: int, cosine: bool = False
) -> SimMatrix:
    """Inner-product matrix of the top-``min(k, len(ranking))`` documents in rank order."""
    ids, vecs = _top_vectors(ranking, store, k)
    n = len(ids)
    if store.kind is VectorKind.DENSE:
        mat = np.vstack([v.values for v in vecs])
        if cosine:
            norms = np.linalg.norm(mat, axis=1)
            norms[norms == 0] = 1.0
            mat = mat / norms[:, None]
        w = mat @ mat.T
        # mirror the upper triangle so symmetry is exact
        w = np.triu(w) + np.triu(w, 1).T
    else:
        w = np.empty((n, n))
        norms = [math.sqrt(v.dot(v)) or 1.0 for v in vecs] if cosine else [1.0] * n
        for i in range(n):
            for j in range(i, n):
                w[i, j] = w[j, i] = vecs[i].dot(vecs[j]) / (norms[i] * norms[j])
    prov = Provenance.DENSE if store.kind is VectorKind.DENSE else Provenance.SPARSE
    return SimMatrix(w, tuple(ids), prov)


def query_dots(ranking: ScoredRanking, store: VectorStore, query_vec: DenseVector, k: int) -> np.ndarray:
    if store.kind is not VectorKind.DENSE:
        raise DataError("query adjustment needs a dense vector store")
    if query_vec.dim != store.dim:
        raise DataError(f"query vector dim {query_vec.dim} does not match store dim {store.dim}")
    _, vecs = _top_vectors(ranking, store, k)
    return np.vstack([v.values for v in vecs]) @ query_vec.values


def adjust_matrix(
    w: SimMatrix, ranking: ScoredRanking, query_vec: DenseVector, store: VectorStore
) -> SimMatrix:
    """Reweight each entry by the query similarity of both documents."""
    if w.provenance is not Provenance.DENSE:
        raise DataError(f"adjustment needs a dense similarity matrix, got {w.provenance.value}")
    if tuple(ranking.doc_ids[: w.k]) != w.doc_ids:
        raise DataError("ranking does not match the similarity matrix documents")
    dots = query_dots(ranking, store, query_vec, w.k)
    a = w.entries * np.outer(dots, dots)
    a = np.triu(a) + np.triu(a, 1).T
    return SimMatrix(a, w.doc_ids, Provenance.ADJUSTED)


def prune_graph(w: SimMatrix) -> PrunedGraph:
    """Keep edges whose similarity is strictly above the mean off-diagonal similarity."""
    k = w.k
    if k < 2:
        raise DataError("graph pruning needs at least two documents")
    iu, ju = np.triu_indices(k, 1)
    pair_sims = w.entries[iu, ju]
    # fsum plus clamping keeps an all-equal matrix at exactly its common value
    threshold = math.fsum(pair_sims.tolist()) / len(pair_sims)
    threshold = min(max(threshold, float(pair_sims.min())), float(pair_sims.max()))
    keep = pair_sims > threshold
    # the rounded mean can misclassify entries sitting on it; settle those exactly
    near = np.flatnonzero(np.abs(pair_sims - threshold) <= 4 * np.spacing(abs(threshold)))
    if near.size:
        exact = sum(map(Fraction, pair_sims.tolist()), Fraction(0)) / len(pair_sims)
        for idx in near:
            keep[idx] = Fraction(float(pair_sims[idx])) > exact
    adjacency: dict[int, set[int]] = {i: set() for i in range(k)}
    weights = {}
    for i, j, s in zip(iu[keep], ju[keep], pair_sims[keep]):
        i, j = int(i), int(j)
        adjacency[i].add(j)
        adjacency[j].add(i)
        weights[(i, j)] = float(s)
    return PrunedGraph(k, {i: frozenset(n) for i, n in adjacency.items()}, weights, threshold)


def export_matrix_csv(w: SimMatrix, sink: IO[str]) -> None:
    """Write ``k`` lines of ``k`` comma-separated entries in rank order."""
    lines = [",".join(_fmt(v) for v in row) for row in w.entries]
    sink.write("\n".join(lines) + "\n")


def _fmt(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)
