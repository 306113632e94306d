"""Readers and writers for run, qrels, vector, query-type and table files.

All formats are whitespace or tab delimited UTF-8 text.  Lines may end in LF
or CRLF.  Floats are written with ``repr`` so a write/parse cycle is exact.
"""

from __future__ import annotations

import io
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

from .core import (
    DataError,
    DenseVector,
    EffectivenessTable,
    PredictorTable,
    QueryTable,
    QueryTypeMap,
    Qrels,
    SareTable,
    ScoredRanking,
    SparseVector,
    VectorKind,
    VectorStore,
    validate_ranking,
)

log = logging.getLogger(__name__)

TextSource = IO[str] | Iterable[str]


def _lines(stream: TextSource):
    for lineno, line in enumerate(stream, start=1):
        yield lineno, line.rstrip("\r\n")


def _float(tok: str, lineno: int, what: str = "value") -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"line {lineno}: {what} {tok!r} is not a real number") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: {what} {tok!r} is not finite")
    return v


def open_text(path: str | Path) -> IO[str]:
    return open(path, "r", encoding="utf-8", newline="")


# runs -----------------------------------------------------------------------


def parse_run(stream: TextSource) -> dict[str, ScoredRanking]:
    """Parse a 6-column TREC run; rankings are re-sorted by score."""
    grouped: dict[str, list[tuple[str, float]]] = {}
    for lineno, line in _lines(stream):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        qid, _, docid, _rank, score, _ = parts
        grouped.setdefault(qid, []).append((docid, _float(score, lineno, "score")))
    out = {}
    for qid, raw in grouped.items():
        try:
            out[qid] = validate_ranking(raw, qid)
        except DataError as e:
            raise DataError(f"query {qid}: {e}") from None
    return out


def write_run(rankings: Mapping[str, ScoredRanking], sink: IO[str], tag: str = "denseqpp") -> None:
    for qid in sorted(rankings):
        for rank, (docid, score) in enumerate(rankings[qid].entries, start=1):
            sink.write(f"{qid} Q0 {docid} {rank} {score!r} {tag}\n")


# qrels ----------------------------------------------------------------------


def parse_qrels(stream: TextSource) -> Qrels:
    judgments: dict[tuple[str, str], int] = {}
    duplicates = 0
    for lineno, line in _lines(stream):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        qid, _, docid, grade = parts
        try:
            g = int(grade)
        except ValueError:
            raise DataError(f"line {lineno}: grade {grade!r} is not an integer") from None
        if g < 0:
            raise DataError(f"line {lineno}: negative grade {g}")
        if (qid, docid) in judgments:
            duplicates += 1
        judgments[(qid, docid)] = g
    if duplicates:
        log.warning("qrels: %d duplicate judgment(s); kept the last grade", duplicates)
    return Qrels(judgments)


def write_qrels(qrels: Qrels, sink: IO[str]) -> None:
    for (qid, docid), grade in sorted(qrels.judgments.items()):
        sink.write(f"{qid} 0 {docid} {grade}\n")


# vectors --------------------------------------------------------------------


def parse_dense_vectors(stream: TextSource) -> VectorStore:
    it = _lines(stream)
    dim = None
    for lineno, line in it:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] != "dim":
            raise DataError(f"line {lineno}: expected header 'dim D'")
        try:
            dim = int(parts[1])
        except ValueError:
            raise DataError(f"line {lineno}: dim {parts[1]!r} is not an integer") from None
        if dim < 1:
            raise DataError(f"line {lineno}: dim must be positive")
        break
    if dim is None:
        raise DataError("dense vector file has no 'dim D' header")
    vectors = {}
    for lineno, line in it:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != dim + 1:
            raise DataError(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
        vid = parts[0]
        if vid in vectors:
            raise DataError(f"line {lineno}: duplicate vector id {vid!r}")
        vectors[vid] = DenseVector(np.array([_float(t, lineno) for t in parts[1:]]))
    return VectorStore(VectorKind.DENSE, vectors, dim=dim)


def write_dense_vectors(store: VectorStore, sink: IO[str]) -> None:
    sink.write(f"dim {store.dim}\n")
    for vid in sorted(store.vectors):
        vals = " ".join(repr(float(v)) for v in store[vid].values)
        sink.write(f"{vid} {vals}\n")


def parse_sparse_vectors(stream: TextSource) -> VectorStore:
    vectors = {}
    for lineno, line in _lines(stream):
        if not line.strip():
            continue
        parts = line.split()
        vid = parts[0]
        if vid in vectors:
            raise DataError(f"line {lineno}: duplicate vector id {vid!r}")
        comps = {}
        for tok in parts[1:]:
            term, sep, weight = tok.rpartition(":")
            if not sep or not term:
                raise DataError(f"line {lineno}: component {tok!r} is not term:weight")
            w = _float(weight, lineno, "weight")
            if w < 0:
                raise DataError(f"line {lineno}: negative weight for {term!r}")
            comps[term] = comps.get(term, 0.0) + w
        vectors[vid] = SparseVector(comps)
    return VectorStore(VectorKind.SPARSE, vectors)


def write_sparse_vectors(store: VectorStore, sink: IO[str]) -> None:
    for vid in sorted(store.vectors):
        comps = store[vid].components
        body = " ".join(f"{t}:{comps[t]!r}" for t in sorted(comps))
        sink.write(f"{vid} {body}".rstrip() + "\n")


def parse_vectors(stream: TextSource) -> VectorStore:
    """Sniff the format: a leading ``dim D`` header means dense."""
    text = stream.read() if hasattr(stream, "read") else "".join(stream)
    first = next((ln for ln in text.splitlines() if ln.strip()), "")
    parts = first.split()
    if len(parts) == 2 and parts[0] == "dim":
        return parse_dense_vectors(io.StringIO(text))
    return parse_sparse_vectors(io.StringIO(text))


@dataclass(frozen=True)
class CorpusStats:
    num_docs: int
    doc_freq: Mapping[str, int]

    def __post_init__(self):
        if self.num_docs < 1:
            raise DataError("corpus must contain at least one document")
        for term, df in self.doc_freq.items():
            if not 1 <= df <= self.num_docs:
                raise DataError(f"document frequency {df} of {term!r} outside [1, {self.num_docs}]")

    def idf(self, term: str) -> float:
        return math.log(self.num_docs / self.doc_freq[term])


def corpus_stats(docs: Mapping[str, list[str]]) -> CorpusStats:
    df: Counter[str] = Counter()
    for tokens in docs.values():
        df.update({t.lower() for t in tokens})
    return CorpusStats(len(docs), dict(df))


def build_tfidf(corpus: Iterable[tuple[str, list[str]]]) -> VectorStore:
    """Sparse TF.IDF vectors with weight ``tf * ln(N / df)``.

    Tokens are lowercased; terms present in every document get weight 0 and
    are dropped.
    """
    docs: dict[str, list[str]] = {}
    for doc_id, tokens in corpus:
        if doc_id in docs:
            raise DataError(f"duplicate document {doc_id!r} in corpus")
        docs[doc_id] = [t.lower() for t in tokens]
    if not docs:
        raise DataError("corpus is empty")
    stats = corpus_stats(docs)
    vectors = {}
    for doc_id, tokens in docs.items():
        tf = Counter(tokens)
        vectors[doc_id] = SparseVector({t: n * stats.idf(t) for t, n in tf.items()})
    return VectorStore(VectorKind.SPARSE, vectors)


def parse_corpus(stream: TextSource) -> list[tuple[str, list[str]]]:
    """One document per line: ``doc_id`` then whitespace-separated tokens."""
    out = []
    for _, line in _lines(stream):
        if line.strip():
            parts = line.split()
            out.append((parts[0], parts[1:]))
    return out


# query types ----------------------------------------------------------------


def parse_query_types(stream: TextSource, strict: bool = False) -> QueryTypeMap:
    assignment: dict[str, str] = {}
    for lineno, line in _lines(stream):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise DataError(f"line {lineno}: expected 'qid<TAB>label'")
        qid, label = parts[0].strip(), parts[1].strip()
        if qid in assignment and assignment[qid] != label:
            raise DataError(
                f"line {lineno}: query {qid!r} labelled both {assignment[qid]!r} and {label!r}"
            )
        assignment[qid] = label
    return QueryTypeMap(assignment, strict=strict)


def write_query_types(types: QueryTypeMap, sink: IO[str]) -> None:
    for qid in sorted(types.assignment):
        sink.write(f"{qid}\t{types[qid]}\n")


# per-query tables -----------------------------------------------------------


def write_table(table: QueryTable, sink: IO[str], header: Mapping[str, object] | None = None) -> None:
    """TSV with ``#`` comment header, a ``qid`` column row and ``NA`` for gaps."""
    for key, value in (header or {}).items():
        sink.write(f"# {key}: {value}\n")
    for (qid, name), reason in sorted(table.missing.items()):
        sink.write(f"# missing\t{qid}\t{name}\t{reason}\n")
    sink.write("\t".join(("qid",) + table.names) + "\n")
    for qid in table.query_ids:
        cells = ["NA" if math.isnan(v) else repr(float(v)) for v in table.values[qid]]
        sink.write("\t".join([qid] + cells) + "\n")


def read_header(stream: TextSource) -> dict[str, str]:
    out = {}
    for _, line in _lines(stream):
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        key, sep, value = body.partition(": ")
        if sep and not body.startswith("missing\t"):
            out[key] = value
    return out


def parse_table(stream: TextSource, cls: type[QueryTable] = PredictorTable) -> QueryTable:
    names = None
    rows: dict[str, list[float]] = {}
    missing: dict[tuple[str, str], str] = {}
    for lineno, line in _lines(stream):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].strip().split("\t")
            if parts[0] == "missing" and len(parts) == 4:
                missing[(parts[1], parts[2])] = parts[3]
            continue
        parts = line.split("\t")
        if names is None:
            if parts[0] != "qid":
                raise DataError(f"line {lineno}: table header must start with 'qid'")
            names = tuple(parts[1:])
            continue
        if len(parts) != len(names) + 1:
            raise DataError(f"line {lineno}: expected {len(names) + 1} cells, got {len(parts)}")
        qid = parts[0]
        if qid in rows:
            raise DataError(f"line {lineno}: duplicate query {qid!r}")
        rows[qid] = [math.nan if c == "NA" else _float(c, lineno) for c in parts[1:]]
    if names is None:
        raise DataError("table has no header row")
    return cls(names, rows, missing)


def read_run(path) -> dict[str, ScoredRanking]:
    with open_text(path) as fh:
        return parse_run(fh)


def read_qrels(path) -> Qrels:
    with open_text(path) as fh:
        return parse_qrels(fh)


def read_vectors(path) -> VectorStore:
    with open_text(path) as fh:
        return parse_vectors(fh)


def read_query_types(path, strict: bool = False) -> QueryTypeMap:
    with open_text(path) as fh:
        return parse_query_types(fh, strict=strict)


def read_table(path, cls: type[QueryTable] = PredictorTable) -> QueryTable:
    with open_text(path) as fh:
        return parse_table(fh, cls)

