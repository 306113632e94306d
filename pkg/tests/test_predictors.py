import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from denseqpp.core import (
    ConfigError,
    DataError,
    DenseVector,
    NumericalError,
    ScoredRanking,
    SparseVector,
    VectorKind,
    VectorStore,
)
from denseqpp.evaluation import kendall_tau
from denseqpp.predictors import (
    ALL_PREDICTORS,
    InterpolationParams,
    PairRatioParams,
    PredictorConfig,
    PredictorParams,
    RsdParams,
    a_pair_ratio,
    autocorrelation,
    compute_all,
    interpolate,
    max_score,
    nqc,
    pair_ratio,
    rsd_uni,
    wand,
    wd,
)
from denseqpp.similarity import PrunedGraph, build_sim_matrix, prune_graph
from denseqpp.synthetic import generate_fixture
from helpers import dense_store, random_instance, ranking, sim


def graph_from_edges(k, edges):
    adj = {i: set() for i in range(k)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    return PrunedGraph(k, {i: frozenset(v) for i, v in adj.items()}, {tuple(sorted(e)): 1.0 for e in edges}, 0.0)


# score-based


def test_max():
    r = ranking([0.2, 0.9, 0.5])
    assert max_score(r, 3) == 0.9
    assert max_score(r, 1) == 0.9
    assert max_score(ranking([0.4] * 4), 4) == 0.4


def test_nqc_examples(frozen):
    assert nqc(ranking([3.0] * 5), 5) == 0.0
    assert nqc(ranking([4, 2, 0]), 3) == pytest.approx(frozen["nqc_420"], rel=1e-14)
    assert nqc(ranking([4, 2, 0]), 3) == pytest.approx(0.816497, abs=1e-6)


def test_nqc_degenerate_normaliser():
    with pytest.raises(NumericalError):
        nqc(ranking([1, -1]), 2)


def test_rsd_matches_scripted_reference(frozen):
    r = ranking(range(10, 0, -1))
    value = rsd_uni(r, 10, RsdParams(num_samples=100, seed=7))
    # same draws; the reference sums in pure Python, so allow last-digit rounding
    assert value == pytest.approx(frozen["rsd_k10_seed7"], rel=1e-12)
    assert value == pytest.approx(oracles.rsd_reference(list(range(10, 0, -1)), 10, 100, 7), rel=1e-12)


def test_rsd_constant_is_zero():
    for seed in range(5):
        assert rsd_uni(ranking([2.0] * 20), 20, RsdParams(seed=seed)) == 0.0


def test_rsd_deterministic():
    r = ranking(np.random.default_rng(1).normal(5, 1, 50))
    vals = {rsd_uni(r, 50, RsdParams(seed=3)) for _ in range(5)}
    assert len(vals) == 1


def test_rsd_small_k_rejected():
    with pytest.raises(DataError):
        rsd_uni(ranking([3, 2]), 2)


def test_rsd_params_validation():
    with pytest.raises((ConfigError, DataError)):
        RsdParams(frac_low=0.9, frac_high=0.8)


# autocorrelation


def test_ac_identity_is_one():
    assert autocorrelation(sim(np.eye(3)), ranking([3, 2, 1])) == pytest.approx(1.0)


def test_ac_hand_example(frozen):
    w = sim([[1, .5, .2], [.5, 1, .4], [.2, .4, 1]])
    v = autocorrelation(w, ranking([3, 2, 1]))
    assert v == pytest.approx(frozen["ac_hand"], rel=1e-12)
    assert abs(v - 0.9332) <= 1e-4


def test_ac_needs_three_and_variance():
    with pytest.raises(DataError):
        autocorrelation(sim(np.eye(2)), ranking([2, 1]))
    with pytest.raises(NumericalError):
        autocorrelation(sim(np.eye(3)), ranking([1, 1, 1]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 20))
def test_ac_bounded_and_scale_invariant(seed, k):
    rng = np.random.default_rng(seed)
    r, store, _ = random_instance(rng, k)
    w = build_sim_matrix(r, store, k)
    v = autocorrelation(w, r)
    assert -1.0 <= v <= 1.0
    scaled = ScoredRanking("q", tuple((d, 3.5 * s) for d, s in r.entries))
    assert autocorrelation(w, scaled) == pytest.approx(v, rel=1e-12, abs=1e-12)


# graph


def test_wand_wd_hand(frozen):
    g = graph_from_edges(3, [(0, 1), (1, 2)])
    assert wand(g) == frozen["wand_path3"] == 5 / 3
    assert wd(g) == frozen["wd_path3"] == 4 / 6


def test_graph_extremes():
    empty = graph_from_edges(4, [])
    assert wand(empty) == 0 and wd(empty) == 0
    k = 5
    full = graph_from_edges(k, [(i, j) for i in range(k) for j in range(i + 1, k)])
    assert wand(full) == k - 1 and wd(full) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.data())
def test_graph_brute_force(k, data):
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    edges = data.draw(st.lists(st.sampled_from(pairs), unique=True))
    g = graph_from_edges(k, edges)
    assert wand(g) == pytest.approx(oracles.brute_wand(k, edges), rel=1e-15)
    assert wd(g) == pytest.approx(oracles.brute_wd(k, edges), rel=1e-15)
    assert 0 <= wd(g) <= 1 and 0 <= wand(g) <= k - 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 15))
def test_graph_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(k, k))
    m = a + a.T
    perm = rng.permutation(k)
    g, gp = prune_graph(sim(m)), prune_graph(sim(m[np.ix_(perm, perm)]))
    assert wand(g) == pytest.approx(wand(gp), rel=1e-12)
    assert wd(g) == wd(gp)


# pairRatio


def two_block():
    m = np.zeros((4, 4))
    np.fill_diagonal(m, 1.0)
    m[0, 1] = m[1, 0] = 0.8
    m[2, 3] = m[3, 2] = 0.4
    return m


def test_pair_ratio_uniform():
    m = np.full((6, 6), 0.3)
    np.fill_diagonal(m, 2.0)
    assert pair_ratio(sim(m), PairRatioParams(3, 4)) == pytest.approx(1.0)


def test_pair_ratio_two_block():
    assert pair_ratio(sim(two_block()), PairRatioParams(2, 3)) == 2.0


def test_pair_ratio_order_sensitive():
    m = two_block()
    perm = [2, 3, 0, 1]
    assert pair_ratio(sim(m[np.ix_(perm, perm)]), PairRatioParams(2, 3)) == 0.5


def test_pair_ratio_matches_block_oracle():
    rng = np.random.default_rng(5)
    a = rng.uniform(0.1, 1, size=(12, 12))
    m = a + a.T
    got = pair_ratio(sim(m), PairRatioParams(4, 7))
    ref = oracles.block_mean_offdiag(m.tolist(), 1, 4) / oracles.block_mean_offdiag(m.tolist(), 7, 12)
    assert got == pytest.approx(ref, rel=1e-13)


def test_pair_ratio_invalid_params_and_degenerate():
    with pytest.raises((ConfigError, DataError)):
        pair_ratio(sim(two_block()), PairRatioParams(2, 4))
    with pytest.raises((ConfigError, DataError)):
        PairRatioParams(1, 3)
    m = two_block()
    m[2, 3] = m[3, 2] = 0.0
    with pytest.raises(NumericalError):
        pair_ratio(sim(m), PairRatioParams(2, 3))


def test_a_pair_ratio_hand():
    # query dots: docs 0,1 -> 1, docs 2,3 -> 0.5 with theta = e1
    r = ranking([4, 3, 2, 1])
    store = dense_store([[1, 0], [1, 0], [0.5, 0], [0.5, 0]])
    theta = DenseVector([1.0, 0.0])
    assert a_pair_ratio(sim(two_block()), r, theta, store, PairRatioParams(2, 3)) == pytest.approx(8.0, abs=1e-12)


def test_a_pair_ratio_unit_dots_equals_pair_ratio():
    r = ranking([4, 3, 2, 1])
    store = dense_store([[1, 5], [1, -2], [1, 3], [1, 0]])
    theta = DenseVector([1.0, 0.0])
    w = sim(two_block())
    assert a_pair_ratio(w, r, theta, store, PairRatioParams(2, 3)) == pair_ratio(w, PairRatioParams(2, 3))


# interpolation


def test_interpolate_midpoint():
    out = interpolate({"a": 0.0, "b": 1.0}, {"a": 1.0, "b": 0.0}, InterpolationParams(0.5))
    assert out == {"a": 0.5, "b": 0.5}


def test_interpolate_endpoints_follow_inputs():
    rng = np.random.default_rng(2)
    coh = {f"q{i}": float(v) for i, v in enumerate(rng.normal(size=15))}
    nq = {f"q{i}": float(v) for i, v in enumerate(rng.normal(size=15))}
    at0 = interpolate(coh, nq, InterpolationParams(0.0))
    at1 = interpolate(coh, nq, InterpolationParams(1.0))
    assert sorted(at0, key=at0.get) == sorted(nq, key=nq.get)
    assert sorted(at1, key=at1.get) == sorted(coh, key=coh.get)


def test_interpolate_constant_column():
    with pytest.raises(NumericalError):
        interpolate({"a": 1.0, "b": 1.0}, {"a": 0.0, "b": 1.0}, InterpolationParams(0.5))


def test_lambda_range():
    with pytest.raises((ConfigError, DataError)):
        InterpolationParams(1.5)


# scaling invariance (score predictors) and tau invariance


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.01, 100))
def test_score_predictor_scaling(seed, c):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.5, 3.0, size=30)
    r = ranking(s)
    rc = ranking(c * s)
    assert max_score(rc, 30) == pytest.approx(c * max_score(r, 30), rel=1e-12)
    assert nqc(rc, 30) == pytest.approx(nqc(r, 30), rel=1e-12)
    p = RsdParams(seed=seed)
    assert rsd_uni(rc, 30, p) == pytest.approx(rsd_uni(r, 30, p), rel=1e-12)


# batch computation


@pytest.fixture(scope="module")
def fixture_data():
    return generate_fixture()


def test_compute_all_score_only(fixture_data):
    table = compute_all(fixture_data["run"], PredictorConfig(predictors=("Max", "NQC")))
    assert table.names == ("Max", "NQC") and len(table.query_ids) == 20


def test_compute_all_missing_store_rejected(fixture_data):
    with pytest.raises(ConfigError):
        compute_all(fixture_data["run"], PredictorConfig(predictors=("AC-embs",)))


def test_compute_all_thirteen(fixture_data):
    d = fixture_data
    table = compute_all(d["run"], PredictorConfig(), sparse_store=d["sparse"], dense_store=d["dense"], query_vecs=d["queries"])
    assert table.names == ALL_PREDICTORS and len(ALL_PREDICTORS) == 13
    assert not table.missing
    assert all(np.all(np.isfinite(row)) for row in table.values.values())


def test_compute_all_records_missing_with_reason():
    runs = {"a": ranking([1, 1, 1], "a"), "b": ranking([3, 2, 1], "b")}
    table = compute_all(runs, PredictorConfig(predictors=("NQC", "RSD"), default_k=3))
    assert math.isnan(table.column("RSD")["a"]) is False
    runs = {"a": ranking([1, -1, 0], "a"), "b": ranking([3, 2, 1], "b")}
    table = compute_all(runs, PredictorConfig(predictors=("NQC",), default_k=3))
    assert math.isnan(table.column("NQC")["a"])
    assert "normalizer" in table.missing[("a", "NQC")]


def test_compute_all_mixed_cutoffs(fixture_data):
    d = fixture_data
    params = {"NQC": PredictorParams(k=10), "Max": PredictorParams(k=50)}
    table = compute_all(d["run"], PredictorConfig(predictors=("NQC", "Max"), params=params))
    q = "q01"
    assert table.column("NQC")[q] == nqc(d["run"][q], 10)


def test_compute_all_parallel_matches_serial(fixture_data):
    d = fixture_data
    cfg = PredictorConfig()
    kw = dict(sparse_store=d["sparse"], dense_store=d["dense"], query_vecs=d["queries"])
    assert compute_all(d["run"], cfg, jobs=2, **kw) == compute_all(d["run"], cfg, jobs=1, **kw)


def test_tau_invariant_under_scaling(fixture_data):
    runs = fixture_data["run"]
    eff = {q: float(i % 7) for i, q in enumerate(sorted(runs))}
    base = compute_all(runs, PredictorConfig(predictors=("Max", "NQC")))
    scaled_runs = {q: ScoredRanking(q, tuple((dd, 4.0 * s) for dd, s in r.entries)) for q, r in runs.items()}
    scaled = compute_all(scaled_runs, PredictorConfig(predictors=("Max", "NQC")))
    for name in ("Max", "NQC"):
        assert kendall_tau(base.column(name), eff).tau == kendall_tau(scaled.column(name), eff).tau
