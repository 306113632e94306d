import io
import logging
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denseqpp.core import (
    DataError,
    DenseVector,
    EffectivenessTable,
    PredictorTable,
    QueryTypeMap,
    Qrels,
    SparseVector,
    VectorKind,
    VectorStore,
    validate_ranking,
)
from denseqpp.ingest import (
    build_tfidf,
    parse_dense_vectors,
    parse_qrels,
    parse_query_types,
    parse_run,
    parse_sparse_vectors,
    parse_table,
    parse_vectors,
    read_header,
    write_dense_vectors,
    write_qrels,
    write_query_types,
    write_run,
    write_sparse_vectors,
    write_table,
)


def S(text):
    return io.StringIO(text)


def roundtrip(write, parse, value):
    buf = io.StringIO()
    write(value, buf)
    return parse(io.StringIO(buf.getvalue()))


# runs


def test_parse_run_basic():
    runs = parse_run(S("q1 Q0 d1 1 2.5 run\nq1 Q0 d2 2 1.5 run"))
    assert runs["q1"].entries == (("d1", 2.5), ("d2", 1.5))


def test_parse_run_arity_error_has_line_number():
    with pytest.raises(DataError, match="line 1"):
        parse_run(S("q1 d1 2.5\n"))


def test_parse_run_groups_interleaved_and_resorts():
    runs = parse_run(S("q1 Q0 a 1 1 t\nq2 Q0 b 1 3 t\nq1 Q0 c 2 5 t\nq2 Q0 d 2 4 t\n"))
    assert runs["q1"].doc_ids == ["c", "a"]
    assert runs["q2"].doc_ids == ["d", "b"]


def test_parse_run_empty_and_crlf():
    assert parse_run(S("")) == {}
    assert parse_run(S("q Q0 d 1 1.0 t\r\n"))["q"].doc_ids == ["d"]


def test_parse_run_rejects_non_finite_score():
    with pytest.raises(DataError):
        parse_run(S("q Q0 d 1 nan t\n"))


# qrels


def test_parse_qrels_basic():
    assert dict(parse_qrels(S("q1 0 d1 2")).judgments) == {("q1", "d1"): 2}


def test_parse_qrels_last_wins_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        q = parse_qrels(S("q1 0 d1 2\nq1 0 d1 3\n"))
    assert dict(q.judgments) == {("q1", "d1"): 3}
    assert "1 duplicate" in caplog.text


def test_parse_qrels_non_integer_grade():
    with pytest.raises(DataError, match="line 1"):
        parse_qrels(S("q1 0 d1 two"))


# vectors


def test_parse_dense_basic():
    store = parse_dense_vectors(S("dim 2\nd1 0.5 0.5"))
    assert store.dim == 2 and store["d1"].values.tolist() == [0.5, 0.5]


def test_parse_dense_arity():
    with pytest.raises(DataError):
        parse_dense_vectors(S("dim 3\nd1 1 2"))


def test_parse_dense_empty_body():
    store = parse_dense_vectors(S("dim 4\n"))
    assert len(store) == 0 and store.dim == 4


def test_parse_dense_non_finite():
    with pytest.raises(DataError):
        parse_dense_vectors(S("dim 1\nd1 inf"))


def test_parse_sparse_basic():
    store = parse_sparse_vectors(S("d1 cat:1.5 dog:0.5"))
    assert dict(store["d1"].components) == {"cat": 1.5, "dog": 0.5}


def test_parse_sparse_negative():
    with pytest.raises(DataError):
        parse_sparse_vectors(S("d1 cat:-1"))


def test_parse_sparse_unparseable_weight():
    with pytest.raises(DataError):
        parse_sparse_vectors(S("d1 cat:abc"))


def test_parse_sparse_degenerate_doc():
    assert dict(parse_sparse_vectors(S("d1"))["d1"].components) == {}


def test_parse_vectors_sniffs_format():
    assert parse_vectors(S("dim 1\na 1\n")).kind is VectorKind.DENSE
    assert parse_vectors(S("a x:1\n")).kind is VectorKind.SPARSE


# tf.idf


def test_tfidf_term_in_every_doc_dropped():
    store = build_tfidf([("d1", ["cat"]), ("d2", ["cat", "dog"])])
    assert "cat" not in store["d1"].components


def test_tfidf_weight(frozen):
    store = build_tfidf([("d1", ["cat", "cat"]), ("d2", ["dog"])])
    assert store["d1"].components["cat"] == pytest.approx(frozen["tfidf_cat_weight"], rel=1e-12)
    assert store["d1"].components["cat"] == pytest.approx(1.3863, abs=1e-4)


def test_tfidf_empty_doc_and_lowercasing():
    store = build_tfidf([("d1", []), ("d2", ["Cat"]), ("d3", ["cat", "dog"])])
    assert dict(store["d1"].components) == {}
    assert set(store["d2"].components) == {"cat"}


def test_tfidf_permutation_invariant():
    rng = random.Random(3)
    corpus = [(f"d{i}", [rng.choice("abcdefgh") for _ in range(rng.randint(0, 8))]) for i in range(30)]
    shuffled = corpus[:]
    rng.shuffle(shuffled)
    assert build_tfidf(corpus) == build_tfidf(shuffled)


# query types


def test_query_types_parse():
    assert parse_query_types(S("q1\tFactoid"))["q1"] == "Factoid"


def test_query_types_conflict():
    with pytest.raises(DataError, match="q1"):
        parse_query_types(S("q1\tFactoid\nq1\tReason"))


def test_query_types_new_label_when_not_strict():
    assert parse_query_types(S("q1\tMyType"))["q1"] == "MyType"
    with pytest.raises(DataError):
        parse_query_types(S("q1\tMyType"), strict=True)


# round trips

ids = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-", min_size=1, max_size=8)
reals = st.floats(-1e9, 1e9, allow_nan=False, allow_infinity=False)


@given(st.dictionaries(ids, st.lists(reals, min_size=1, max_size=8), min_size=1, max_size=5))
def test_run_roundtrip(raw):
    runs = {q: validate_ranking([(f"{q}d{i}", v) for i, v in enumerate(vals)], q) for q, vals in raw.items()}
    back = roundtrip(write_run, parse_run, runs)
    # file order is the ranking order, so ties keep their order through the cycle
    assert back == runs


@given(st.dictionaries(st.tuples(ids, ids), st.integers(0, 4), max_size=20))
def test_qrels_roundtrip(j):
    assert roundtrip(write_qrels, parse_qrels, Qrels(j)) == Qrels(j)


@given(st.integers(1, 5).flatmap(lambda d: st.dictionaries(ids, st.lists(reals, min_size=d, max_size=d), max_size=6).map(lambda m: (d, m))))
def test_dense_roundtrip(arg):
    d, m = arg
    store = VectorStore(VectorKind.DENSE, {k: DenseVector(np.array(v)) for k, v in m.items()}, dim=d)
    assert roundtrip(write_dense_vectors, parse_dense_vectors, store) == store


@given(st.dictionaries(ids, st.dictionaries(ids, st.floats(0, 1e6, allow_nan=False), max_size=5), max_size=6))
def test_sparse_roundtrip(m):
    store = VectorStore(VectorKind.SPARSE, {k: SparseVector(v) for k, v in m.items()})
    assert roundtrip(write_sparse_vectors, parse_sparse_vectors, store) == store


@given(st.dictionaries(ids, st.sampled_from(["Factoid", "Reason", "My Type"]), max_size=8))
def test_query_types_roundtrip(m):
    types = QueryTypeMap(m)
    assert roundtrip(write_query_types, parse_query_types, types) == types


@settings(max_examples=50)
@given(st.dictionaries(ids, st.lists(st.one_of(reals, st.just(math.nan)), min_size=3, max_size=3), max_size=6))
def test_table_roundtrip(rows):
    table = PredictorTable(("A", "B(C)", "D-e"), rows, {("x", "A"): "undefined"})
    buf = io.StringIO()
    write_table(table, buf, {"seed": 1})
    back = parse_table(io.StringIO(buf.getvalue()), PredictorTable)
    assert back == table and dict(back.missing) == {("x", "A"): "undefined"}
    assert read_header(io.StringIO(buf.getvalue())) == {"seed": "1"}


def test_table_parse_errors():
    with pytest.raises(DataError):
        parse_table(S("q\tA\n"))
    with pytest.raises(DataError):
        parse_table(S("qid\tA\nq1\t1\t2\n"))
    with pytest.raises(DataError):
        parse_table(S("# only comments\n"))


def test_effectiveness_table_class_checks_bounds():
    with pytest.raises(DataError):
        parse_table(S("qid\tm\nq\t2.0\n"), EffectivenessTable)
