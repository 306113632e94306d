import json
import math

import pytest

from denseqpp.cli import main, parse_args
from denseqpp.core import EffectivenessTable, PredictorTable, SareTable
from denseqpp.ingest import read_table
from denseqpp.predictors import ALL_PREDICTORS
from denseqpp.synthetic import fixture_paths

FIX = {k: str(v) for k, v in fixture_paths().items()}
ORDER = ",".join(ALL_PREDICTORS)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    paths = {n: d / f"{n}.tsv" for n in ("pred", "eff", "corr", "sare")}
    paths["lme"] = d / "lme.json"
    assert run("predict", "--jobs", "1", "--out", paths["pred"]) == 0
    assert run("evaluate", "--out", paths["eff"]) == 0
    assert run("correlate", "--predictions", paths["pred"], "--effectiveness", paths["eff"], "--out", paths["corr"]) == 0
    assert run("sare", "--predictions", paths["pred"], "--effectiveness", paths["eff"], "--out", paths["sare"]) == 0
    assert run("lme", "--sare", paths["sare"], "--order", ORDER, "--out", paths["lme"]) == 0
    return paths


def test_predict_all_thirteen(pipeline):
    t = read_table(str(pipeline["pred"]), PredictorTable)
    assert t.names == ALL_PREDICTORS and len(t.query_ids) == 20
    assert not any(math.isnan(v) for row in t.values.values() for v in row)


def test_predict_single_column(tmp_path):
    out = tmp_path / "p.tsv"
    assert run("predict", "--predictors", "Max", "--sparse", "none", "--dense", "none", "--queries", "none",
               "--out", out) == 0
    t = read_table(str(out), PredictorTable)
    assert t.names == ("Max",)


def test_predict_dense_predictor_without_store(tmp_path, capsys):
    assert run("predict", "--predictors", "AC-embs", "--dense", "none", "--out", tmp_path / "x") == 1
    assert "AC-embs" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_unknown_predictor_and_missing_file(tmp_path):
    assert run("predict", "--predictors", "Bogus") == 1
    assert run("evaluate", "--run", tmp_path / "nope.txt") == 1
    assert run() == 1
    assert run("frobnicate") == 1


def test_malformed_run_is_data_error(tmp_path):
    bad = tmp_path / "run.txt"
    bad.write_text("q1 Q0 d1 1 notanumber x\n")
    assert run("evaluate", "--run", bad) == 2


def test_evaluate_defaults_and_header(pipeline):
    t = read_table(str(pipeline["eff"]), EffectivenessTable)
    assert t.names == ("NDCG@10", "MAP@100", "MRR@10")
    head = pipeline["eff"].read_text().splitlines()[:6]
    assert any("NDCG@10,MAP@100,MRR@10" in line for line in head)
    assert any(line.startswith("# seed") for line in head)
    assert not any("created" in line for line in head)


def test_evaluate_empty_intersection(tmp_path):
    qrels = tmp_path / "qrels.txt"
    qrels.write_text("zz 0 d1 2\n")
    out = tmp_path / "e.tsv"
    assert run("evaluate", "--qrels", qrels, "--out", out) == 0
    assert not read_table(str(out), EffectivenessTable).query_ids


def _corr_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    cols = lines[0].split("\t")
    return cols, {l.split("\t")[0]: dict(zip(cols, l.split("\t"))) for l in lines[1:]}


def test_correlate_matrix_mode(pipeline):
    cols, rows = _corr_rows(pipeline["corr"])
    assert cols[:4] == ["predictor", "NDCG@10:tau", "NDCG@10:p", "NDCG@10:n"]
    assert set(rows) == set(ALL_PREDICTORS)
    for r in rows.values():
        assert -1 <= float(r["MAP@100:tau"]) <= 1 and r["MAP@100:n"] == "20"


def test_correlate_identical_and_reversed(tmp_path):
    pred = tmp_path / "p.tsv"
    eff = tmp_path / "e.tsv"
    pred.write_text("qid\tA\tB\n" + "".join(f"q{i}\t{i}\t{-i}\n" for i in range(8)))
    eff.write_text("qid\tM\n" + "".join(f"q{i}\t{i / 10}\n" for i in range(8)))
    out = tmp_path / "c.tsv"
    assert run("correlate", "--predictions", pred, "--effectiveness", eff, "--out", out) == 0
    _, rows = _corr_rows(out)
    assert float(rows["A"]["M:tau"]) == 1.0 and float(rows["B"]["M:tau"]) == -1.0
    assert run("correlate", "--predictions", pred, "--effectiveness", eff, "--predictor", "A", "--metric", "M",
               "--out", out) == 0
    assert list(_corr_rows(out)[1]) == ["A"]
    assert run("correlate", "--predictions", pred, "--effectiveness", eff, "--metric", "X") == 2


def test_sare_table(pipeline):
    t = read_table(str(pipeline["sare"]), SareTable)
    assert t.names == ALL_PREDICTORS
    assert all(0 <= v < 1 for row in t.values.values() for v in row)


def test_lme_report(pipeline):
    rep = json.loads(pipeline["lme"].read_text())
    assert rep["meta"]["command"] == "lme"
    dev = {k: v["deviance"] for k, v in rep["fits"].items()}
    assert dev["full"] <= dev["qpp"] + 1e-8 and dev["qpp"] <= dev["average"] + 1e-8
    assert rep["chosen_model"] in rep["fits"] and rep["deviance_nested_ok"]


def test_lme_requires_order(pipeline):
    assert run("lme", "--sare", pipeline["sare"]) == 1
    assert run("lme", "--sare", pipeline["sare"], "--order", "Max,Nope") == 2
    assert run("lme", "--sare", pipeline["sare"], "--order", "Max,Max") == 2


def test_cross_tuning(tmp_path):
    params = tmp_path / "params.txt"
    trace = tmp_path / "trace.tsv"
    assert run("tune", "--predictors", "NQC,pairRatio", "--cutoffs", "5,10,20,50,100,200", "--trace", trace,
               "--out", params) == 0
    text = params.read_text()
    assert "NQC.k = " in text and "pairRatio.tau = " in text
    # cutoffs deeper than the 100-document fixture rankings are skipped
    assert "# skipped" in trace.read_text() and "\n200" not in trace.read_text()
    out = tmp_path / "pred.tsv"
    assert run("predict", "--predictors", "NQC,pairRatio", "--params", params, "--jobs", "1", "--out", out) == 0
    k = [l for l in text.splitlines() if l.startswith("NQC.k")][0].split("=")[1].strip()
    assert f"k={k}" in out.read_text()


def test_simmatrix(tmp_path):
    out = tmp_path / "m.csv"
    assert run("simmatrix", "--query", "q01", "--k", "5", "--out", out) == 0
    body = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert len(body) == 5 and all(len(l.split(",")) == 5 for l in body)
    assert run("simmatrix", "--query", "q01", "--k", "5", "--space", "sparse", "--adjusted") == 1
    assert run("simmatrix", "--query", "zzz") == 2


def test_explain_and_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("k = 20\nrsd-samples = 7\n")
    assert run("predict", "--config", cfg, "--k", "30", "--explain") == 0
    out = capsys.readouterr().out
    assert "k = 30" in out and "rsd_samples = 7" in out
    cfg.write_text("nonsense = 1\n")
    assert run("predict", "--config", cfg) == 1


def test_required_option_from_config(tmp_path, pipeline):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"order = {ORDER}\nsare = {pipeline['sare']}\n")
    args = parse_args(["lme", "--config", str(cfg)])
    assert args.order == ALL_PREDICTORS


def test_single_query_type_is_data_error(tmp_path):
    sare_path = tmp_path / "s.tsv"
    types = tmp_path / "t.tsv"
    sare_path.write_text("qid\tA\tB\n" + "".join(f"q{i}\t0.{i}\t0.{9 - i}\n" for i in range(6)))
    types.write_text("".join(f"q{i}\tReason\n" for i in range(6)))
    code = run("lme", "--sare", sare_path, "--types", types, "--order", "A,B", "--out", tmp_path / "o.json")
    assert code == 2 and not (tmp_path / "o.json").exists()


def test_numerical_failure_exit(monkeypatch, pipeline, capsys):
    import denseqpp.cli as cli
    from denseqpp.core import NumericalError

    def boom(design):
        raise NumericalError("singular")

    monkeypatch.setattr(cli, "select_model", boom)
    assert run("lme", "--sare", pipeline["sare"], "--order", ORDER) == 3
    assert "numerical" in capsys.readouterr().err


def test_byte_reproducible_and_stamp(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for p in (a, b):
        assert run("predict", "--predictors", "RSD,NQC", "--seed", "5", "--out", p) == 0
    assert a.read_bytes() == b.read_bytes()
    assert run("predict", "--predictors", "RSD,NQC", "--seed", "5", "--stamp", "--out", c) == 0
    assert "# created" in c.read_text()
    assert run("predict", "--predictors", "RSD", "--seed", "6", "--out", c) == 0
    assert a.read_bytes() != c.read_bytes()


def test_jobs_do_not_change_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("predict", "--jobs", "1", "--out", a) == 0
    assert run("predict", "--jobs", "3", "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
