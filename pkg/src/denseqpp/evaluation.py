"""Per-query effectiveness metrics, Kendall's tau-b and scaled absolute rank error."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .core import (
    DataError,
    EffectivenessTable,
    NumericalError,
    PredictorTable,
    Qrels,
    SareTable,
    ScoredRanking,
    aligned,
)

log = logging.getLogger(__name__)

DEFAULT_METRICS = ("NDCG@10", "MAP@100", "MRR@10")


def _judged(ranking: ScoredRanking, qrels: Qrels | Mapping[str, int]) -> Mapping[str, int]:
    if isinstance(qrels, Qrels):
        return qrels.for_query(ranking.query_id)
    return qrels


def _log2_discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at(ranking: ScoredRanking, qrels: Qrels | Mapping[str, int], cutoff: int = 10) -> float:
    """NDCG with raw-grade gains and log2 discount; 0 when nothing is relevant."""
    judged = _judged(ranking, qrels)
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:cutoff]
    if not ideal:
        return 0.0
    gains = np.array([judged.get(d, 0) for d in ranking.doc_ids[:cutoff]], dtype=np.float64)
    dcg = float(gains @ _log2_discounts(len(gains)))
    idcg = float(np.array(ideal, dtype=np.float64) @ _log2_discounts(len(ideal)))
    return dcg / idcg


def map_at(
    ranking: ScoredRanking, qrels: Qrels | Mapping[str, int], cutoff: int = 100, rel_threshold: int = 2
) -> float:
    judged = _judged(ranking, qrels)
    num_rel = sum(1 for g in judged.values() if g >= rel_threshold)
    if num_rel == 0:
        return 0.0
    hits = 0
    total = 0.0
    for r, d in enumerate(ranking.doc_ids[:cutoff], start=1):
        if judged.get(d, 0) >= rel_threshold:
            hits += 1
            total += hits / r
    return total / num_rel


def mrr_at(
    ranking: ScoredRanking, qrels: Qrels | Mapping[str, int], cutoff: int = 10, rel_threshold: int = 2
) -> float:
    judged = _judged(ranking, qrels)
    for r, d in enumerate(ranking.doc_ids[:cutoff], start=1):
        if judged.get(d, 0) >= rel_threshold:
            return 1.0 / r
    return 0.0


def parse_metric(name: str) -> tuple[str, int]:
    base, sep, cut = name.partition("@")
    base = base.upper()
    if base not in ("NDCG", "MAP", "MRR") or not sep:
        raise DataError(f"unknown metric {name!r}; expected NDCG@n, MAP@n or MRR@n")
    try:
        cutoff = int(cut)
    except ValueError:
        raise DataError(f"metric {name!r} has a non-integer cutoff") from None
    if cutoff < 1:
        raise DataError(f"metric {name!r} needs a positive cutoff")
    return base, cutoff


def metric_value(name: str, ranking: ScoredRanking, judged: Mapping[str, int], rel_threshold: int = 2) -> float:
    base, cutoff = parse_metric(name)
    if base == "NDCG":
        return ndcg_at(ranking, judged, cutoff)
    if base == "MAP":
        return map_at(ranking, judged, cutoff, rel_threshold)
    return mrr_at(ranking, judged, cutoff, rel_threshold)


def evaluate_run(
    rankings: Mapping[str, ScoredRanking],
    qrels: Qrels,
    metrics: Sequence[str] = DEFAULT_METRICS,
    rel_threshold: int = 2,
) -> EffectivenessTable:
    judged_queries = set(qrels.query_ids)
    dropped = sorted(set(rankings) - judged_queries)
    if dropped:
        log.warning("%d run queries have no judgments and were dropped", len(dropped))
    for m in metrics:
        parse_metric(m)
    values = {}
    for qid in sorted(set(rankings) & judged_queries):
        judged = qrels.for_query(qid)
        values[qid] = [metric_value(m, rankings[qid], judged, rel_threshold) for m in metrics]
    return EffectivenessTable(tuple(metrics), values)


# rank correlation -----------------------------------------------------------


@dataclass(frozen=True)
class TauResult:
    tau: float
    p_value: float
    n: int

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def pair_counts(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """Concordant, discordant, tied-only-in-x and tied-only-in-y pair counts."""
    n = len(x)
    iu, ju = np.triu_indices(n, 1)
    sx = np.sign(x[ju] - x[iu])
    sy = np.sign(y[ju] - y[iu])
    prod = sx * sy
    c = int(np.count_nonzero(prod > 0))
    d = int(np.count_nonzero(prod < 0))
    tx = int(np.count_nonzero((sx == 0) & (sy != 0)))
    ty = int(np.count_nonzero((sy == 0) & (sx != 0)))
    return c, d, tx, ty


def tau_b_from_counts(c: int, d: int, tx: int, ty: int) -> float:
    denom = math.sqrt((c + d + tx) * (c + d + ty))
    if denom == 0.0:
        raise NumericalError("Kendall's tau undefined: a vector is entirely tied")
    return (c - d) / denom


def _tie_sums(v: np.ndarray) -> tuple[float, float, float]:
    _, counts = np.unique(v, return_counts=True)
    t = counts[counts > 1].astype(np.float64)
    return float(np.sum(t * (t - 1))), float(np.sum(t * (t - 1) * (t - 2))), float(np.sum(t * (t - 1) * (2 * t + 5)))


def kendall_tau(
    x: Mapping[str, float] | Sequence[float], y: Mapping[str, float] | Sequence[float]
) -> TauResult:
    """Tau-b over all query pairs, with a two-sided normal-approximation p-value.

    Mapping inputs are aligned by query id and queries missing on either side
    (absent or NaN) are dropped.
    """
    if isinstance(x, Mapping) != isinstance(y, Mapping):
        raise DataError("pass both columns as mappings or both as sequences")
    if isinstance(x, Mapping):
        _, xa, ya = aligned(x, y)
    else:
        xa, ya = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        if xa.shape != ya.shape:
            raise DataError("columns differ in length")
        keep = ~(np.isnan(xa) | np.isnan(ya))
        xa, ya = xa[keep], ya[keep]
    n = len(xa)
    if n < 2:
        raise NumericalError(f"Kendall's tau needs at least 2 queries, got {n}")
    c, d, tx, ty = pair_counts(xa, ya)
    tau = tau_b_from_counts(c, d, tx, ty)

    # variance of S = C - D under independence, with tie corrections
    vx1, vx2, vx5 = _tie_sums(xa)
    vy1, vy2, vy5 = _tie_sums(ya)
    var_s = (n * (n - 1) * (2 * n + 5) - vx5 - vy5) / 18.0
    var_s += vx1 * vy1 / (2.0 * n * (n - 1))
    if n > 2:
        var_s += vx2 * vy2 / (9.0 * n * (n - 1) * (n - 2))
    p = 1.0 if var_s <= 0 else float(2.0 * norm.sf(abs(c - d) / math.sqrt(var_s)))
    return TauResult(tau, min(1.0, p), n)


def correlate_tables(
    predictors: PredictorTable, effectiveness: EffectivenessTable
) -> dict[tuple[str, str], TauResult]:
    out = {}
    for p in predictors.names:
        for m in effectiveness.names:
            out[(p, m)] = kendall_tau(predictors.column(p), effectiveness.column(m))
    return out


# sARE -----------------------------------------------------------------------


def descending_ranks(values: np.ndarray) -> np.ndarray:
    """Rank 1 = largest value; ties share the mean of the ranks they span."""
    return rankdata(-np.asarray(values, dtype=np.float64), method="average")


def sare(predicted: Mapping[str, float], effectiveness: Mapping[str, float]) -> dict[str, float]:
    """Per-query ``|r_pred - r_eff| / |Q|`` over the shared query set."""
    if set(predicted) != set(effectiveness):
        raise DataError("predictor and effectiveness columns cover different queries")
    qids = sorted(predicted)
    if len(qids) < 2:
        raise DataError("sARE needs at least 2 queries")
    p = np.array([predicted[q] for q in qids], dtype=np.float64)
    e = np.array([effectiveness[q] for q in qids], dtype=np.float64)
    if np.any(np.isnan(p)) or np.any(np.isnan(e)):
        raise DataError("sARE columns must not contain missing values")
    err = np.abs(descending_ranks(p) - descending_ranks(e)) / len(qids)
    return dict(zip(qids, err.tolist()))


def sare_table(
    predictors: PredictorTable, effectiveness: EffectivenessTable, metric: str
) -> SareTable:
    """sARE for every predictor against one metric, on queries complete in all columns."""
    eff = effectiveness.column(metric)
    qids = set(eff)
    for name in predictors.names:
        col = predictors.column(name)
        qids &= {q for q, v in col.items() if not math.isnan(v)}
    qids = {q for q in qids if not math.isnan(eff[q])}
    dropped = (set(predictors.values) | set(eff)) - qids
    if dropped:
        log.warning("sARE: %d queries dropped for missing values or judgments", len(dropped))
    eff = {q: eff[q] for q in qids}
    cols = {}
    for name in predictors.names:
        col = predictors.column(name)
        cols[name] = sare({q: col[q] for q in qids}, eff)
    values = {q: [cols[n][q] for n in predictors.names] for q in sorted(qids)}
    return SareTable(predictors.names, values)
