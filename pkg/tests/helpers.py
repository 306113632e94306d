"""Small builders shared by the test modules."""

import numpy as np

from denseqpp.core import DenseVector, ScoredRanking, VectorKind, VectorStore, validate_ranking
from denseqpp.similarity import Provenance, SimMatrix


def ranking(scores, qid="q", prefix="d"):
    return validate_ranking([(f"{prefix}{i}", float(s)) for i, s in enumerate(scores)], qid)


def sim(matrix, provenance=Provenance.DENSE, ids=None):
    m = np.asarray(matrix, dtype=float)
    ids = ids or [f"d{i}" for i in range(m.shape[0])]
    return SimMatrix(m, tuple(ids), provenance)


def dense_store(vectors, prefix="d"):
    return VectorStore(VectorKind.DENSE, {f"{prefix}{i}": DenseVector(np.asarray(v, float)) for i, v in enumerate(vectors)})


def random_instance(rng, k, dim=6):
    """A ranking, dense store and query vector whose scores are the inner products."""
    theta = rng.normal(size=dim)
    docs = rng.normal(size=(k, dim)) + 0.5 * theta
    scores = docs @ theta
    ids = [f"d{i}" for i in range(k)]
    r = ScoredRanking("q", tuple(sorted(zip(ids, scores.tolist()), key=lambda e: -e[1])))
    store = VectorStore(VectorKind.DENSE, {i: DenseVector(v) for i, v in zip(ids, docs)})
    return r, store, DenseVector(theta)


# acceptance verdicts, echoed in the terminal summary by conftest
ACCEPTANCE_LINES = []
