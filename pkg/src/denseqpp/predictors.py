"""Unsupervised score-based and coherence-based query performance predictors."""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DenseVector,
    NumericalError,
    PredictorTable,
    ScoredRanking,
    VectorKind,
    VectorStore,
)
from .similarity import (
    PrunedGraph,
    SimMatrix,
    adjust_matrix,
    build_sim_matrix,
    prune_graph,
)

SCORE_PREDICTORS = ("Max", "NQC", "RSD")
SPARSE_PREDICTORS = ("AC", "WAND", "WD", "WAND(NQC)", "WD(NQC)")
DENSE_PREDICTORS = ("AC-embs", "WAND-embs", "WD-embs", "pairRatio", "A-pairRatio")
ALL_PREDICTORS = SCORE_PREDICTORS + SPARSE_PREDICTORS + DENSE_PREDICTORS
INTERPOLATED = {"WAND(NQC)": "WAND", "WD(NQC)": "WD"}
PAIR_RATIO_PREDICTORS = ("pairRatio", "A-pairRatio")

EPS = 1e-12


@dataclass(frozen=True)
class PairRatioParams:
    """1-based rank thresholds: upper block is ranks ``1..tau_upper``, lower is ``tau_lower..k``."""

    tau_upper: int
    tau_lower: int

    def __post_init__(self):
        if self.tau_upper < 2 or self.tau_lower < self.tau_upper:
            raise ConfigError(
                f"need 2 <= tau_upper <= tau_lower, got ({self.tau_upper}, {self.tau_lower})"
            )

    def check(self, k: int) -> None:
        if self.tau_lower > k - 1:
            raise ConfigError(
                f"tau_lower={self.tau_lower} leaves no lower-block pair for k={k}"
            )


@dataclass(frozen=True)
class RsdParams:
    num_samples: int = 100
    frac_low: float = 0.60
    frac_high: float = 0.80
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be positive")
        if not 0 < self.frac_low <= self.frac_high <= 1:
            raise ConfigError(f"need 0 < frac_low <= frac_high <= 1, got {self.frac_low}, {self.frac_high}")

    def sample_sizes(self, k: int) -> tuple[int, int]:
        # small epsilon keeps 0.6*10 == 6 exact under float rounding
        lo = math.ceil(self.frac_low * k - 1e-9)
        hi = math.floor(self.frac_high * k + 1e-9)
        return lo, hi


@dataclass(frozen=True)
class InterpolationParams:
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")


# score-based ----------------------------------------------------------------


def _top(ranking: ScoredRanking, k: int) -> np.ndarray:
    if k < 1:
        raise DataError(f"cutoff must be positive, got {k}")
    return ranking.scores[:k]


def _normalizer(scores: np.ndarray) -> float:
    mu = abs(float(np.mean(scores)))
    if mu <= EPS:
        raise NumericalError(f"mean of top-{len(scores)} scores is {mu:g}; normalizer degenerate")
    return mu


def max_score(ranking: ScoredRanking, k: int) -> float:
    return float(np.max(_top(ranking, k)))


def nqc(ranking: ScoredRanking, k: int) -> float:
    """Population standard deviation of the top-k scores over their absolute mean."""
    s = _top(ranking, k)
    return float(np.std(s)) / _normalizer(s)


def rsd_uni(ranking: ScoredRanking, k: int, params: RsdParams = RsdParams()) -> float:
    s = _top(ranking, k)
    k = len(s)
    lo, hi = params.sample_sizes(k)
    if k < 2 or lo < 2 or lo > hi:
        raise DataError(f"RSD needs a larger cutoff: k={k} gives sample sizes [{lo}, {hi}]")
    mu = _normalizer(s)
    rng = np.random.default_rng(params.seed)
    stds = np.empty(params.num_samples)
    for b in range(params.num_samples):
        m = int(rng.integers(lo, hi + 1))
        idx = rng.choice(k, size=m, replace=False)
        stds[b] = np.std(s[idx])
    return float(np.mean(stds)) / mu


# coherence ------------------------------------------------------------------


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx <= EPS * max(1.0, float(np.max(np.abs(x)))) or sy <= EPS * max(1.0, float(np.max(np.abs(y)))):
        raise NumericalError("correlation undefined: a vector has zero variance")
    return max(-1.0, min(1.0, float(xc @ yc) / (sx * sy)))


def diffuse(w: SimMatrix, ranking: ScoredRanking) -> np.ndarray:
    return w.entries @ ranking.scores[: w.k]


def autocorrelation(w: SimMatrix, ranking: ScoredRanking) -> float:
    """Pearson correlation between the top-k scores and their similarity-diffused version."""
    if w.k < 3:
        raise DataError(f"autocorrelation needs k >= 3, got {w.k}")
    if tuple(ranking.doc_ids[: w.k]) != w.doc_ids:
        raise DataError("ranking does not match the similarity matrix documents")
    s = ranking.scores[: w.k]
    return pearson(s, diffuse(w, ranking))


def wand(graph: PrunedGraph) -> float:
    """Average neighbour degree on the pruned graph; isolated nodes contribute 0."""
    deg = {i: len(nb) for i, nb in graph.adjacency.items()}
    total = 0.0
    for i, nb in graph.adjacency.items():
        if nb:
            total += sum(deg[j] for j in nb) / deg[i]
    return total / graph.k


def wd(graph: PrunedGraph) -> float:
    if graph.k < 2:
        raise DataError("density needs at least two nodes")
    return 2.0 * graph.num_edges / (graph.k * (graph.k - 1))


def _block_mean(m: np.ndarray) -> float:
    n = m.shape[0]
    iu = np.triu_indices(n, 1)
    return float(np.mean(m[iu]))


def pair_ratio(w: SimMatrix, params: PairRatioParams) -> float:
    """Mean off-diagonal similarity of the top block over that of the bottom block."""
    params.check(w.k)
    e = w.entries
    upper = _block_mean(e[: params.tau_upper, : params.tau_upper])
    lower = _block_mean(e[params.tau_lower - 1 :, params.tau_lower - 1 :])
    if abs(lower) <= EPS:
        raise NumericalError(f"lower-block mean similarity {lower:g} is degenerate")
    return upper / lower


def a_pair_ratio(
    w: SimMatrix,
    ranking: ScoredRanking,
    query_vec: DenseVector,
    store: VectorStore,
    params: PairRatioParams,
) -> float:
    return pair_ratio(adjust_matrix(w, ranking, query_vec, store), params)


def minmax(values: Mapping[str, float]) -> dict[str, float]:
    arr = np.array(list(values.values()), dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo <= EPS * max(1.0, abs(hi), abs(lo)):
        raise NumericalError("cannot min-max normalise a constant column")
    return {q: (v - lo) / (hi - lo) for q, v in values.items()}


def interpolate(
    coherence: Mapping[str, float], nqc_values: Mapping[str, float], params: InterpolationParams
) -> dict[str, float]:
    """Linear mix of min-max normalised coherence and NQC columns."""
    if set(coherence) != set(nqc_values):
        raise DataError("coherence and NQC columns cover different queries")
    a, b = minmax(coherence), minmax(nqc_values)
    return {q: params.lam * a[q] + (1.0 - params.lam) * b[q] for q in sorted(a)}


# batch computation ----------------------------------------------------------


@dataclass(frozen=True)
class PredictorParams:
    k: int = 100
    tau: PairRatioParams | None = None
    lam: float | None = None


DEFAULT_TAU = PairRatioParams(10, 50)
DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class PredictorConfig:
    predictors: tuple[str, ...] = ALL_PREDICTORS
    default_k: int = 100
    params: Mapping[str, PredictorParams] = field(default_factory=dict)
    rsd: RsdParams = RsdParams()
    seed: int = 0

    def __post_init__(self):
        unknown = [p for p in self.predictors if p not in ALL_PREDICTORS]
        if unknown:
            raise ConfigError(f"unknown predictor(s) {unknown}; known: {list(ALL_PREDICTORS)}")
        if len(set(self.predictors)) != len(self.predictors):
            raise ConfigError("predictor list has duplicates")
        object.__setattr__(self, "predictors", tuple(self.predictors))

    def for_predictor(self, name: str) -> PredictorParams:
        p = self.params.get(name, PredictorParams(k=self.default_k))
        if name in PAIR_RATIO_PREDICTORS and p.tau is None:
            p = replace(p, tau=DEFAULT_TAU)
        if name in INTERPOLATED and p.lam is None:
            p = replace(p, lam=DEFAULT_LAMBDA)
        return p


def query_seed(seed: int, query_id: str, *extra) -> int:
    """Stable per-query seed so results do not depend on processing order."""
    key = "\x1f".join([str(seed), query_id, *map(str, extra)])
    return zlib.crc32(key.encode("utf-8"))


def check_inputs(
    predictors: Sequence[str],
    sparse_store: VectorStore | None,
    dense_store: VectorStore | None,
    query_vecs: VectorStore | None,
) -> None:
    problems = []
    for name in predictors:
        if name in SPARSE_PREDICTORS and sparse_store is None:
            problems.append(f"{name} needs a sparse vector store")
        if name in DENSE_PREDICTORS and dense_store is None:
            problems.append(f"{name} needs a dense vector store")
        if name == "A-pairRatio" and query_vecs is None:
            problems.append(f"{name} needs query vectors")
    if sparse_store is not None and sparse_store.kind is not VectorKind.SPARSE:
        problems.append("sparse store holds dense vectors")
    if dense_store is not None and dense_store.kind is not VectorKind.DENSE:
        problems.append("dense store holds sparse vectors")
    if query_vecs is not None and query_vecs.kind is not VectorKind.DENSE:
        problems.append("query vectors must be dense")
    if dense_store is not None and query_vecs is not None and dense_store.dim != query_vecs.dim:
        problems.append(f"query vector dim {query_vecs.dim} differs from document dim {dense_store.dim}")
    if problems:
        raise ConfigError("; ".join(problems))


def predict_one(
    name: str,
    ranking: ScoredRanking,
    params: PredictorParams,
    *,
    sparse_store: VectorStore | None = None,
    dense_store: VectorStore | None = None,
    query_vecs: VectorStore | None = None,
    rsd: RsdParams = RsdParams(),
    seed: int = 0,
    cache: dict | None = None,
) -> float:
    """Value of one non-interpolated predictor for one query."""
    k = params.k
    cache = {} if cache is None else cache

    def matrix(store):
        key = (store.kind, k)
        if key not in cache:
            cache[key] = build_sim_matrix(ranking, store, k)
        return cache[key]

    def graph(store):
        key = ("graph", store.kind, k)
        if key not in cache:
            cache[key] = prune_graph(matrix(store))
        return cache[key]

    if name == "Max":
        return max_score(ranking, k)
    if name == "NQC":
        return nqc(ranking, k)
    if name == "RSD":
        return rsd_uni(ranking, k, replace(rsd, seed=query_seed(seed, ranking.query_id, k)))
    if name == "AC":
        return autocorrelation(matrix(sparse_store), ranking)
    if name == "AC-embs":
        return autocorrelation(matrix(dense_store), ranking)
    if name in ("WAND", "WD", "WAND-embs", "WD-embs"):
        store = dense_store if name.endswith("-embs") else sparse_store
        g = graph(store)
        return wand(g) if name.startswith("WAND") else wd(g)
    if name == "pairRatio":
        return pair_ratio(matrix(dense_store), params.tau)
    if name == "A-pairRatio":
        qid = ranking.query_id
        if qid not in query_vecs:
            raise DataError(f"no query vector for query {qid!r}")
        return a_pair_ratio(matrix(dense_store), ranking, query_vecs[qid], dense_store, params.tau)
    raise ConfigError(f"{name} is not a per-query predictor")


_WORKER: dict = {}


def _init_worker(state):
    _WORKER.clear()
    _WORKER.update(state)


def _query_row(ranking: ScoredRanking, tasks: list[tuple[str, PredictorParams]], state=None):
    state = _WORKER if state is None else state
    cache: dict = {}
    out = []
    for name, params in tasks:
        try:
            out.append((predict_one(name, ranking, params, cache=cache, **state), None))
        except NumericalError as e:
            out.append((math.nan, str(e)))
        except DataError as e:
            raise DataError(f"query {ranking.query_id}, predictor {name}: {e}") from None
    return ranking.query_id, out


def compute_all(
    rankings: Mapping[str, ScoredRanking],
    config: PredictorConfig = PredictorConfig(),
    *,
    sparse_store: VectorStore | None = None,
    dense_store: VectorStore | None = None,
    query_vecs: VectorStore | None = None,
    jobs: int = 1,
) -> PredictorTable:
    """One column per requested predictor; per-query numerical failures become NaN gaps."""
    names = config.predictors
    check_inputs(names, sparse_store, dense_store, query_vecs)
    for name in names:
        p = config.for_predictor(name)
        if p.k < 1:
            raise ConfigError(f"{name}: cutoff must be positive")
        if p.tau is not None:
            p.tau.check(p.k)
        if p.lam is not None:
            InterpolationParams(p.lam)

    # per-query tasks, including the components of interpolated predictors
    tasks: list[tuple[str, PredictorParams]] = []
    for name in names:
        p = config.for_predictor(name)
        if name in INTERPOLATED:
            base = PredictorParams(k=p.k)
            tasks += [(INTERPOLATED[name], base), ("NQC", base)]
        else:
            tasks.append((name, p))
    tasks = list(dict.fromkeys(tasks))
    index = {t: i for i, t in enumerate(tasks)}

    state = dict(
        sparse_store=sparse_store,
        dense_store=dense_store,
        query_vecs=query_vecs,
        rsd=config.rsd,
        seed=config.seed,
    )
    qids = sorted(rankings)
    results: dict[str, list] = {}
    if jobs > 1 and len(qids) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as ex:
            for qid, row in ex.map(_query_row, [rankings[q] for q in qids], [tasks] * len(qids)):
                results[qid] = row
    else:
        for q in qids:
            qid, row = _query_row(rankings[q], tasks, state)
            results[qid] = row

    columns: dict[str, dict[str, float]] = {}
    missing: dict[tuple[str, str], str] = {}
    for name in names:
        p = config.for_predictor(name)
        if name in INTERPOLATED:
            base = PredictorParams(k=p.k)
            ci, ni = index[(INTERPOLATED[name], base)], index[("NQC", base)]
            coh, nq = {}, {}
            for q in qids:
                (cv, cr), (nv, nr) = results[q][ci], results[q][ni]
                if cr or nr:
                    missing[(q, name)] = cr or nr
                else:
                    coh[q], nq[q] = cv, nv
            col = {q: math.nan for q in qids}
            if coh:
                try:
                    col.update(interpolate(coh, nq, InterpolationParams(p.lam)))
                except NumericalError as e:
                    for q in coh:
                        missing[(q, name)] = f"interpolation failed: {e}"
            columns[name] = col
        else:
            i = index[(name, p)]
            col = {}
            for q in qids:
                v, reason = results[q][i]
                col[q] = v
                if reason:
                    missing[(q, name)] = reason
            columns[name] = col

    values = {q: [columns[n][q] for n in names] for q in qids}
    return PredictorTable(names, values, missing)
