"""Seeded synthetic data: mixed-model sARE designs and the bundled retrieval fixture."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import (
    QUERY_TYPES,
    DenseVector,
    Qrels,
    QueryTypeMap,
    ScoredRanking,
    VectorKind,
    VectorStore,
)
from .ingest import (
    build_tfidf,
    write_dense_vectors,
    write_qrels,
    write_query_types,
    write_run,
    write_sparse_vectors,
)
from .lme import LmeDesign

FIXTURE_DIR = Path(__file__).parent / "data" / "fixture"
FIXTURE_FILES = {
    "run": "run.txt",
    "qrels": "qrels.txt",
    "dense": "dense.txt",
    "sparse": "sparse.txt",
    "queries": "queries.txt",
    "types": "query_types.tsv",
}


def simulate_design(
    n_queries: int = 120,
    n_predictors: int = 8,
    gamma00: float = 0.30,
    gamma10: float = -0.01,
    sigma0: float = 0.05,
    sigma1: float = 0.005,
    sigma01: float = 0.0,
    sigma_eps: float = 0.02,
    type_intercept: Mapping[str, float] | None = None,
    type_slope: Mapping[str, float] | None = None,
    types: tuple[str, ...] = QUERY_TYPES,
    seed: int = 0,
) -> LmeDesign:
    """Draw a balanced random-intercept/slope design.

    Query ``i`` gets type ``types[i % len(types)]``; ``type_intercept`` and
    ``type_slope`` add fixed shifts for the named types.
    """
    rng = np.random.default_rng(seed)
    cov = np.array([[sigma0**2, sigma01], [sigma01, sigma1**2]])
    ranef = rng.multivariate_normal(np.zeros(2), cov, size=n_queries)
    x = np.arange(n_predictors, dtype=np.float64)
    type_intercept = dict(type_intercept or {})
    type_slope = dict(type_slope or {})
    qids, idx, tlist, vals = [], [], [], []
    width = len(str(n_queries))
    for i in range(n_queries):
        t = types[i % len(types)]
        b0 = gamma00 + type_intercept.get(t, 0.0) + ranef[i, 0]
        b1 = gamma10 + type_slope.get(t, 0.0) + ranef[i, 1]
        y = b0 + b1 * x + rng.normal(0.0, sigma_eps, size=n_predictors)
        q = f"q{i:0{width}d}"
        for j in range(n_predictors):
            qids.append(q)
            idx.append(j)
            tlist.append(t)
            vals.append(y[j])
    counts = {t: tlist.count(t) for t in set(tlist)}
    reference = min(counts, key=lambda t: (-counts[t], t))
    order = tuple(f"P{j}" for j in range(n_predictors))
    return LmeDesign(tuple(qids), np.array(idx), tuple(tlist), np.array(vals), order, reference)


# retrieval fixture ----------------------------------------------------------


def _orth(rng, theta, scale):
    v = rng.normal(size=theta.shape[0])
    v -= (v @ theta) * theta
    return scale * v / np.linalg.norm(v)


def generate_fixture(
    n_queries: int = 20, docs_per_query: int = 100, dim: int = 8, seed: int = 2023
) -> dict[str, object]:
    """Synthetic run, qrels, dense/sparse vectors, query vectors and query types.

    Each query has a quality level in [0, 1].  Relevant documents form a tight
    cluster along the query direction and score higher as quality rises; a
    group of incoherent distractors outranks them when quality is low.
    Retrieval scores are the dense inner products, so the run is consistent
    with the embeddings.
    """
    rng = np.random.default_rng(seed)
    quality = rng.permutation(np.linspace(0.0, 1.0, n_queries))
    counts = [4, 4, 3, 3, 3, 3] if n_queries == 20 else None
    if counts is None:
        labels = [QUERY_TYPES[i % len(QUERY_TYPES)] for i in range(n_queries)]
    else:
        labels = [t for t, c in zip(QUERY_TYPES, counts) for _ in range(c)]
    labels = list(rng.permutation(labels))

    rankings, dense, queries, judgments, types, corpus = {}, {}, {}, {}, {}, []
    generic = [f"g{m}" for m in range(60)]
    for i in range(n_queries):
        qid = f"q{i + 1:02d}"
        u = float(quality[i])
        theta = rng.normal(size=dim)
        theta /= np.linalg.norm(theta)
        queries[qid] = DenseVector(theta)
        types[qid] = str(labels[i])
        shared = _orth(rng, theta, 0.5)
        topic = [f"{qid}w{m}" for m in range(8)]
        n_rel = int(rng.integers(4, 9))
        n_dis = 12
        entries = []
        for j in range(docs_per_query):
            did = f"{qid}_d{j:03d}"
            if j < n_rel:
                s = 0.8 + 0.45 * u + 0.05 * rng.normal()
                off = shared + _orth(rng, theta, 0.15)
                toks = list(rng.choice(topic, size=10)) + list(rng.choice(generic, size=4))
                grade = int(rng.choice([1, 2, 3], p=[0.2, 0.4, 0.4])) if j else 3
                judgments[(qid, did)] = grade
            elif j < n_rel + n_dis:
                s = 0.95 + 0.08 * rng.normal()
                off = _orth(rng, theta, 0.9)
                toks = [f"{qid}x{int(m)}" for m in rng.integers(0, 200, size=10)]
                toks += list(rng.choice(generic, size=4))
                judgments[(qid, did)] = 0
            else:
                s = float(rng.uniform(0.05, 0.5))
                off = _orth(rng, theta, 0.9)
                toks = list(rng.choice(generic, size=8)) + [f"{qid}y{int(m)}" for m in rng.integers(0, 400, size=4)]
            phi = s * theta + off
            dense[did] = DenseVector(phi)
            entries.append((did, float(phi @ theta)))
            corpus.append((did, [str(t) for t in toks]))
        entries.sort(key=lambda e: -e[1])
        rankings[qid] = ScoredRanking(qid, tuple(entries))

    return {
        "run": rankings,
        "qrels": Qrels(judgments),
        "dense": VectorStore(VectorKind.DENSE, dense, dim=dim),
        "sparse": build_tfidf(corpus),
        "queries": VectorStore(VectorKind.DENSE, queries, dim=dim),
        "types": QueryTypeMap(types, strict=True),
    }


def fixture_texts(data: Mapping[str, object]) -> dict[str, str]:
    writers = {
        "run": write_run,
        "qrels": write_qrels,
        "dense": write_dense_vectors,
        "sparse": write_sparse_vectors,
        "queries": write_dense_vectors,
        "types": write_query_types,
    }
    out = {}
    for key, fn in writers.items():
        buf = io.StringIO()
        fn(data[key], buf)
        out[key] = buf.getvalue()
    return out


def write_fixture(directory: str | Path, seed: int = 2023) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for key, text in fixture_texts(generate_fixture(seed=seed)).items():
        path = directory / FIXTURE_FILES[key]
        path.write_text(text, encoding="utf-8")
        paths[key] = path
    return paths


def fixture_paths() -> dict[str, Path]:
    return {k: FIXTURE_DIR / v for k, v in FIXTURE_FILES.items()}
