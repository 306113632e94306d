"""Shared domain types for rankings, vectors, judgments and per-query tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

QUERY_TYPES = (
    "Evidence-based",
    "Factoid",
    "Experience",
    "Instruction",
    "Reason",
    "Not a Question",
)


class QppError(Exception):
    """Base class for all errors raised by this package."""


class DataError(QppError, ValueError):
    """Input data violates a format or domain invariant."""


class ConfigError(QppError):
    """A requested computation lacks the inputs or parameters it needs."""


class NumericalError(QppError, ArithmeticError):
    """A quantity is undefined for the given data (zero variance, zero normalizer, ...)."""


@dataclass(frozen=True)
class ScoredRanking:
    query_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "entries", tuple((str(d), float(s)) for d, s in self.entries)
        )
        if not self.entries:
            raise DataError(f"ranking for query {self.query_id!r} is empty")
        seen = set()
        prev = math.inf
        for doc_id, score in self.entries:
            if doc_id in seen:
                raise DataError(f"duplicate doc_id {doc_id!r} in query {self.query_id!r}")
            seen.add(doc_id)
            if not math.isfinite(score):
                raise DataError(f"non-finite score for {doc_id!r} in query {self.query_id!r}")
            if score > prev:
                raise DataError(f"ranking for query {self.query_id!r} is not sorted by score")
            prev = score

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.entries], dtype=np.float64)

    def head(self, k: int) -> "ScoredRanking":
        if k < 1:
            raise DataError(f"cutoff must be positive, got {k}")
        if k >= len(self.entries):
            return self
        return ScoredRanking(self.query_id, self.entries[:k])

    def top_scores(self, k: int) -> np.ndarray:
        return self.scores[:k]


def validate_ranking(raw: Iterable[tuple[str, float]], query_id: str = "") -> ScoredRanking:
    """Build a ranking from unordered ``(doc_id, score)`` pairs.

    Entries are sorted by descending score; equal scores keep their input order.
    """
    items = [(str(d), float(s)) for d, s in raw]
    if not items:
        raise DataError(f"ranking for query {query_id!r} is empty")
    seen = set()
    for doc_id, score in items:
        if doc_id in seen:
            raise DataError(f"duplicate doc_id {doc_id!r} in query {query_id!r}")
        seen.add(doc_id)
        if not math.isfinite(score):
            raise DataError(f"non-finite score {score!r} for {doc_id!r} in query {query_id!r}")
    # sorted() is stable, so ties keep file order
    items.sort(key=lambda e: -e[1])
    return ScoredRanking(query_id, tuple(items))


@dataclass(frozen=True)
class SparseVector:
    components: Mapping[str, float]

    def __post_init__(self):
        clean = {}
        for term, w in self.components.items():
            w = float(w)
            if not math.isfinite(w) or w < 0:
                raise DataError(f"invalid weight {w!r} for term {term!r}")
            if w != 0.0:
                clean[str(term)] = w
        object.__setattr__(self, "components", MappingProxyType(clean))

    def dot(self, other: "SparseVector") -> float:
        a, b = self.components, other.components
        if len(a) > len(b):
            a, b = b, a
        return math.fsum(w * b[t] for t, w in a.items() if t in b)

    def scaled(self, c: float) -> "SparseVector":
        return SparseVector({t: w * c for t, w in self.components.items()})

    def __eq__(self, other):
        return isinstance(other, SparseVector) and dict(self.components) == dict(other.components)

    def __hash__(self):
        return hash(frozenset(self.components.items()))


@dataclass(frozen=True, eq=False)
class DenseVector:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise DataError("dense vector must have positive dimension")
        if not np.all(np.isfinite(arr)):
            raise DataError("dense vector contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def dot(self, other: "DenseVector") -> float:
        if other.dim != self.dim:
            raise DataError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return float(self.values @ other.values)

    def __eq__(self, other):
        return isinstance(other, DenseVector) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


class VectorKind(str, Enum):
    SPARSE = "sparse"
    DENSE = "dense"


@dataclass(frozen=True)
class VectorStore:
    kind: VectorKind
    vectors: Mapping[str, SparseVector | DenseVector]
    dim: int | None = None

    def __post_init__(self):
        kind = VectorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        expected = DenseVector if kind is VectorKind.DENSE else SparseVector
        for vid, vec in self.vectors.items():
            if not isinstance(vec, expected):
                raise DataError(f"vector {vid!r} is not {kind.value}")
        if kind is VectorKind.DENSE:
            dims = {v.dim for v in self.vectors.values()}
            if self.dim is None:
                if len(dims) != 1:
                    raise DataError("cannot infer dim of dense store")
                object.__setattr__(self, "dim", dims.pop())
            elif dims - {self.dim}:
                raise DataError(f"dense vectors do not all have dim {self.dim}")
            if self.dim < 1:
                raise DataError("dim must be positive")
        else:
            object.__setattr__(self, "dim", None)
        object.__setattr__(self, "vectors", MappingProxyType(dict(self.vectors)))

    def __contains__(self, vid: str) -> bool:
        return vid in self.vectors

    def __getitem__(self, vid: str):
        return self.vectors[vid]

    def __len__(self) -> int:
        return len(self.vectors)

    def __eq__(self, other):
        return (
            isinstance(other, VectorStore)
            and self.kind == other.kind
            and self.dim == other.dim
            and dict(self.vectors) == dict(other.vectors)
        )


@dataclass(frozen=True)
class Qrels:
    judgments: Mapping[tuple[str, str], int]

    def __post_init__(self):
        for key, grade in self.judgments.items():
            if int(grade) != grade or grade < 0:
                raise DataError(f"invalid grade {grade!r} for {key}")
        by_query: dict[str, dict[str, int]] = {}
        for (qid, did), grade in self.judgments.items():
            by_query.setdefault(qid, {})[did] = int(grade)
        object.__setattr__(self, "judgments", MappingProxyType(dict(self.judgments)))
        object.__setattr__(self, "_by_query", by_query)

    def for_query(self, query_id: str) -> dict[str, int]:
        return dict(self._by_query.get(query_id, {}))

    @property
    def query_ids(self) -> list[str]:
        return sorted(self._by_query)

    def __eq__(self, other):
        return isinstance(other, Qrels) and dict(self.judgments) == dict(other.judgments)


@dataclass(frozen=True)
class QueryTable:
    """Per-query rows of named real values; NaN marks a missing cell."""

    names: tuple[str, ...]
    values: Mapping[str, np.ndarray]
    missing: Mapping[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise DataError(f"duplicate column names: {names}")
        rows = {}
        for qid, row in self.values.items():
            arr = np.array(row, dtype=np.float64).reshape(-1)
            if arr.shape[0] != len(names):
                raise DataError(f"row {qid!r} has {arr.shape[0]} values, expected {len(names)}")
            if np.any(np.isinf(arr)):
                raise DataError(f"row {qid!r} contains infinite values")
            arr.setflags(write=False)
            rows[str(qid)] = arr
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", MappingProxyType(rows))
        object.__setattr__(self, "missing", MappingProxyType(dict(self.missing)))
        self._check()

    def _check(self):
        pass

    @property
    def query_ids(self) -> list[str]:
        return sorted(self.values)

    def column(self, name: str) -> dict[str, float]:
        try:
            j = self.names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}; have {list(self.names)}") from None
        return {qid: float(row[j]) for qid, row in self.values.items()}

    def __eq__(self, other):
        if type(other) is not type(self) or self.names != other.names:
            return False
        if set(self.values) != set(other.values):
            return False
        return all(
            np.array_equal(self.values[q], other.values[q], equal_nan=True) for q in self.values
        )


class PredictorTable(QueryTable):
    pass


class EffectivenessTable(QueryTable):
    def _check(self):
        for qid, row in self.values.items():
            ok = row[~np.isnan(row)]
            if np.any(ok < 0) or np.any(ok > 1):
                raise DataError(f"effectiveness for {qid!r} outside [0, 1]")


class SareTable(QueryTable):
    def _check(self):
        n = len(self.values)
        if n == 0:
            return
        top = (n - 1) / n
        for qid, row in self.values.items():
            ok = row[~np.isnan(row)]
            if np.any(ok < 0) or np.any(ok > top + 1e-12):
                raise DataError(f"sARE for {qid!r} outside [0, {top}]")


@dataclass(frozen=True)
class QueryTypeMap:
    assignment: Mapping[str, str]
    strict: bool = False

    def __post_init__(self):
        if self.strict:
            bad = {q: t for q, t in self.assignment.items() if t not in QUERY_TYPES}
            if bad:
                raise DataError(f"unknown query-type labels: {bad}")
        object.__setattr__(self, "assignment", MappingProxyType(dict(self.assignment)))

    def __getitem__(self, qid: str) -> str:
        return self.assignment[qid]

    def __contains__(self, qid: str) -> bool:
        return qid in self.assignment

    def labels(self) -> list[str]:
        return sorted(set(self.assignment.values()))

    def __eq__(self, other):
        return isinstance(other, QueryTypeMap) and dict(self.assignment) == dict(other.assignment)


def aligned(x: Mapping[str, float], y: Mapping[str, float]) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Intersect two per-query columns, dropping queries missing on either side."""
    qids = sorted(q for q in set(x) & set(y) if not (math.isnan(x[q]) or math.isnan(y[q])))
    return qids, np.array([x[q] for q in qids]), np.array([y[q] for q in qids])


def as_sequence(values: Mapping[str, float] | Sequence[float]) -> np.ndarray:
    if isinstance(values, Mapping):
        return np.array([values[q] for q in sorted(values)], dtype=np.float64)
    return np.asarray(values, dtype=np.float64)
