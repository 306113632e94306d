"""Grid search of predictor hyperparameters against Kendall's tau on a tuning set."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

from .core import ConfigError, DataError, NumericalError, ScoredRanking, VectorStore
from .evaluation import kendall_tau
from .predictors import (
    ALL_PREDICTORS,
    INTERPOLATED,
    PAIR_RATIO_PREDICTORS,
    PairRatioParams,
    PredictorConfig,
    PredictorParams,
    RsdParams,
    compute_all,
)

log = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (5, 10, 20, 50, 100, 200, 500, 1000)
DEFAULT_LAMBDAS = tuple(round(0.1 * i, 1) for i in range(11))

# smallest cutoff each predictor is defined for
MIN_K = {"RSD": 3, "AC": 3, "AC-embs": 3, "WAND": 2, "WD": 2, "WAND-embs": 2, "WD-embs": 2,
         "WAND(NQC)": 2, "WD(NQC)": 2, "pairRatio": 3, "A-pairRatio": 3}


@dataclass(frozen=True)
class TuningGrid:
    cutoffs: tuple[int, ...] = DEFAULT_CUTOFFS
    tau_pairs: tuple[tuple[int, int], ...] | None = None
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS

    def __post_init__(self):
        cutoffs = tuple(int(k) for k in self.cutoffs)
        if not cutoffs or any(k < 1 for k in cutoffs) or list(cutoffs) != sorted(set(cutoffs)):
            raise ConfigError(f"cutoffs must be positive and strictly ascending, got {cutoffs}")
        object.__setattr__(self, "cutoffs", cutoffs)
        if self.tau_pairs is None:
            pairs = tuple((a, b) for a in cutoffs for b in cutoffs if a <= b)
        else:
            pairs = tuple((int(a), int(b)) for a, b in self.tau_pairs)
        object.__setattr__(self, "tau_pairs", pairs)
        lambdas = tuple(float(v) for v in self.lambdas)
        if not lambdas or any(not 0 <= v <= 1 for v in lambdas):
            raise ConfigError("lambdas must lie in [0, 1]")
        object.__setattr__(self, "lambdas", lambdas)


@dataclass(frozen=True)
class GridPoint:
    k: int
    tau: tuple[int, int] | None = None
    lam: float | None = None

    def sort_key(self):
        tu, tl = self.tau if self.tau else (0, 0)
        return (self.k, tu, self.lam if self.lam is not None else 0.0, tl)

    def params(self) -> PredictorParams:
        tau = PairRatioParams(*self.tau) if self.tau else None
        return PredictorParams(k=self.k, tau=tau, lam=self.lam)

    def label(self) -> str:
        parts = [f"k={self.k}"]
        if self.tau:
            parts.append(f"tau={self.tau[0]},{self.tau[1]}")
        if self.lam is not None:
            parts.append(f"lambda={self.lam!r}")
        return " ".join(parts)


@dataclass(frozen=True)
class TuningResult:
    predictor: str
    best: GridPoint
    best_tau: float
    trace: tuple[tuple[GridPoint, float], ...]
    skipped: tuple[tuple[GridPoint, str], ...] = field(default_factory=tuple)


def enumerate_grid(predictor: str, grid: TuningGrid, max_depth: int) -> tuple[list[GridPoint], list[tuple[GridPoint, str]]]:
    """Split the grid for one predictor into feasible points and skipped ones with reasons.

    A cutoff is feasible when every tuning ranking reaches it (``k <= max_depth``)
    and the predictor is defined at that depth.
    """
    if predictor not in ALL_PREDICTORS:
        raise ConfigError(f"unknown predictor {predictor!r}")
    points, skipped = [], []
    for k in grid.cutoffs:
        taus = grid.tau_pairs if predictor in PAIR_RATIO_PREDICTORS else (None,)
        lams = grid.lambdas if predictor in INTERPOLATED else (None,)
        for tau in taus:
            for lam in lams:
                pt = GridPoint(k, tau, lam)
                reason = None
                if k > max_depth:
                    reason = f"k={k} exceeds shortest tuning ranking ({max_depth})"
                elif k < MIN_K.get(predictor, 1):
                    reason = f"{predictor} undefined for k={k}"
                elif tau is not None and not (2 <= tau[0] <= tau[1] <= k - 1):
                    reason = f"tau={tau} infeasible for k={k}"
                if reason:
                    skipped.append((pt, reason))
                else:
                    points.append(pt)
    return points, skipped


def tune(
    predictor: str,
    rankings: Mapping[str, ScoredRanking],
    effectiveness: Mapping[str, float],
    grid: TuningGrid = TuningGrid(),
    *,
    sparse_store: VectorStore | None = None,
    dense_store: VectorStore | None = None,
    query_vecs: VectorStore | None = None,
    rsd: RsdParams = RsdParams(),
    seed: int = 0,
) -> TuningResult:
    """Pick the grid point maximising tau; ties go to smaller k, tau_upper, then lambda."""
    qids = sorted(set(rankings) & set(effectiveness))
    if len(qids) < 2:
        raise DataError(f"tuning needs at least 2 judged queries, got {len(qids)}")
    rankings = {q: rankings[q] for q in qids}
    depth = min(len(r) for r in rankings.values())
    points, skipped = enumerate_grid(predictor, grid, depth)
    trace = []
    for pt in points:
        config = PredictorConfig(
            predictors=(predictor,), params={predictor: pt.params()}, rsd=rsd,
            seed=_point_seed(seed, predictor, pt),
        )
        try:
            table = compute_all(
                rankings, config, sparse_store=sparse_store, dense_store=dense_store,
                query_vecs=query_vecs,
            )
            tau = kendall_tau(table.column(predictor), {q: effectiveness[q] for q in qids}).tau
        except NumericalError as e:
            skipped.append((pt, f"tau undefined: {e}"))
            continue
        trace.append((pt, tau))
    if not trace:
        raise ConfigError(f"no feasible grid point for {predictor}")
    best_pt, best_tau = min(trace, key=lambda t: (-t[1], t[0].sort_key()))
    return TuningResult(predictor, best_pt, best_tau, tuple(trace), tuple(skipped))


def _point_seed(seed: int, predictor: str, pt: GridPoint) -> int:
    return zlib.crc32(f"{seed}|{predictor}|{pt.label()}".encode("utf-8"))


# config files ---------------------------------------------------------------


def parse_key_values(stream: IO[str] | Sequence[str]) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"expected a list of integers, got {text!r}") from None


def grid_from_config(values: Mapping[str, str]) -> TuningGrid:
    kwargs = {}
    unknown = set(values) - {"cutoffs", "tau_pairs", "lambdas"}
    if unknown:
        raise ConfigError(f"unknown grid key(s): {sorted(unknown)}")
    if "cutoffs" in values:
        kwargs["cutoffs"] = _int_list(values["cutoffs"])
    if "tau_pairs" in values:
        pairs = []
        for tok in values["tau_pairs"].replace(",", " ").split():
            a, sep, b = tok.partition(":")
            if not sep:
                raise ConfigError(f"tau pair {tok!r} must look like upper:lower")
            pairs.append((int(a), int(b)))
        kwargs["tau_pairs"] = tuple(pairs)
    if "lambdas" in values:
        try:
            kwargs["lambdas"] = tuple(float(t) for t in values["lambdas"].replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"bad lambda list {values['lambdas']!r}") from None
    return TuningGrid(**kwargs)


def write_trace(result: TuningResult, sink: IO[str]) -> None:
    sink.write("predictor\tk\ttau_upper\ttau_lower\tlambda\tkendall_tau\n")
    for pt, tau in result.trace:
        tu, tl = pt.tau if pt.tau else ("NA", "NA")
        lam = repr(pt.lam) if pt.lam is not None else "NA"
        sink.write(f"{result.predictor}\t{pt.k}\t{tu}\t{tl}\t{lam}\t{tau!r}\n")
    for pt, reason in result.skipped:
        sink.write(f"# skipped {pt.label()}: {reason}\n")


def best_params_lines(result: TuningResult) -> list[str]:
    """Lines of the params file that :func:`params_from_config` reads back."""
    name, pt = result.predictor, result.best
    lines = [f"{name}.k = {pt.k}"]
    if pt.tau:
        lines.append(f"{name}.tau = {pt.tau[0]},{pt.tau[1]}")
    if pt.lam is not None:
        lines.append(f"{name}.lambda = {pt.lam!r}")
    return lines


def params_from_config(values: Mapping[str, str], default_k: int) -> dict[str, PredictorParams]:
    """Per-predictor parameters from ``Name.k``, ``Name.tau`` and ``Name.lambda`` keys."""
    raw: dict[str, dict] = {}
    for key, value in values.items():
        name, sep, attr = key.rpartition(".")
        if not sep or name not in ALL_PREDICTORS or attr not in ("k", "tau", "lambda"):
            raise ConfigError(f"unknown parameter key {key!r}")
        raw.setdefault(name, {})[attr] = value
    out = {}
    for name, attrs in raw.items():
        k = int(attrs["k"]) if "k" in attrs else default_k
        tau = None
        if "tau" in attrs:
            pair = _int_list(attrs["tau"])
            if len(pair) != 2:
                raise ConfigError(f"{name}.tau needs two ranks")
            tau = PairRatioParams(*pair)
        lam = float(attrs["lambda"]) if "lambda" in attrs else None
        if lam is not None and not 0 <= lam <= 1:
            raise ConfigError(f"{name}.lambda must lie in [0, 1]")
        out[name] = PredictorParams(k=k, tau=tau, lam=lam)
    return out
