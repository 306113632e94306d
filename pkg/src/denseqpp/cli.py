"""Command-line interface: ``denseqpp <subcommand> [options]``.

Every option can also come from a ``key = value`` file passed with
``--config``; keys are option names without the leading dashes.  Flags given
on the command line win over the file.  ``--explain`` prints the effective
settings and exits.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import datetime
import io
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .core import (
    ConfigError,
    DataError,
    EffectivenessTable,
    NumericalError,
    PredictorTable,
    SareTable,
    VectorKind,
)
from .evaluation import DEFAULT_METRICS, evaluate_run, kendall_tau, sare_table
from .ingest import (
    open_text,
    read_qrels,
    read_query_types,
    read_run,
    read_table,
    read_vectors,
    write_table,
)
from .lme import build_design, ensure_nested, select_model, write_report
from .predictors import ALL_PREDICTORS, PredictorConfig, RsdParams, check_inputs, compute_all
from .similarity import adjust_matrix, build_sim_matrix, export_matrix_csv
from .synthetic import fixture_paths
from .tuning import (
    DEFAULT_CUTOFFS,
    TuningGrid,
    best_params_lines,
    grid_from_config,
    params_from_config,
    parse_key_values,
    tune,
    write_trace,
)

log = logging.getLogger("denseqpp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

FIXTURE = {k: str(v) for k, v in fixture_paths().items()}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# option parsing helpers -----------------------------------------------------


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _predictors(text: str) -> tuple[str, ...]:
    if text.strip().lower() == "all":
        return ALL_PREDICTORS
    names = _names(text)
    unknown = [n for n in names if n not in ALL_PREDICTORS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown predictor(s) {unknown}")
    return names


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return v


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None


def _jobs(text: str) -> int:
    if text == "auto":
        return os.cpu_count() or 1
    return _positive_int(text)


def _optional_path(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text


def _common(p: argparse.ArgumentParser, out_default: str = "-") -> None:
    p.add_argument("--config", help="key = value file; command-line flags win")
    p.add_argument("--explain", action="store_true", help="print effective settings and exit")
    p.add_argument("--seed", type=_int, default="0", help="random seed recorded in output headers")
    p.add_argument("--stamp", action="store_true", help="add a creation timestamp to output headers")
    p.add_argument("--out", default=out_default, help="output file ('-' for stdout)")
    p.add_argument("-v", "--verbose", action="store_true")


def _run_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run", default=FIXTURE["run"], help="TREC run file")


def _store_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sparse", type=_optional_path, default=FIXTURE["sparse"], help="sparse document vectors")
    p.add_argument("--dense", type=_optional_path, default=FIXTURE["dense"], help="dense document vectors")
    p.add_argument("--queries", type=_optional_path, default=FIXTURE["queries"], help="dense query vectors")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="denseqpp", description="Query performance prediction for sparse and dense retrieval.")
    parser.add_argument("--version", action="version", version=f"denseqpp {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("predict", help="compute predictor values per query")
    _common(p)
    _run_inputs(p)
    _store_inputs(p)
    p.add_argument("--predictors", type=_predictors, default="all", help="comma-separated names or 'all'")
    p.add_argument("--k", type=_positive_int, default="100", help="default cutoff")
    p.add_argument("--params", type=_optional_path, default="none", help="tuned parameter file from 'tune'")
    p.add_argument("--rsd-samples", type=_positive_int, default="100")
    p.add_argument("--jobs", type=_jobs, default="auto", help="worker processes, or 'auto'")

    p = sub.add_parser("evaluate", help="per-query effectiveness metrics")
    _common(p)
    _run_inputs(p)
    p.add_argument("--qrels", default=FIXTURE["qrels"])
    p.add_argument("--metrics", type=_names, default=",".join(DEFAULT_METRICS))
    p.add_argument("--rel-threshold", type=_int, default="2", help="minimum grade counted relevant by MAP and MRR")

    p = sub.add_parser("correlate", help="Kendall's tau between predictors and metrics")
    _common(p)
    p.add_argument("--predictions", required=True, help="table written by 'predict'")
    p.add_argument("--effectiveness", required=True, help="table written by 'evaluate'")
    p.add_argument("--predictor", default="all", help="one predictor, or 'all' for matrix mode")
    p.add_argument("--metric", default="all", help="one metric, or 'all' for matrix mode")

    p = sub.add_parser("tune", help="grid-search predictor parameters on a tuning set")
    _common(p)
    _run_inputs(p)
    _store_inputs(p)
    p.add_argument("--qrels", default=FIXTURE["qrels"])
    p.add_argument("--metric", default="NDCG@10", help="target metric")
    p.add_argument("--rel-threshold", type=_int, default="2")
    p.add_argument("--predictors", type=_predictors, default="all")
    p.add_argument("--grid", type=_optional_path, default="none", help="grid file with cutoffs, tau_pairs, lambdas")
    p.add_argument("--cutoffs", type=_names, default=",".join(map(str, DEFAULT_CUTOFFS)))
    p.add_argument("--tau-pairs", type=_names, default="all", help="upper:lower pairs, or 'all' pairs of cutoffs")
    p.add_argument("--lambdas", type=_names, default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")
    p.add_argument("--rsd-samples", type=_positive_int, default="100")
    p.add_argument("--trace", type=_optional_path, default="none", help="write every grid point's tau here")

    p = sub.add_parser("sare", help="per-query scaled absolute rank error")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--effectiveness", required=True)
    p.add_argument("--metric", default="NDCG@10")

    p = sub.add_parser("lme", help="fit and select mixed-effects models of sARE")
    _common(p)
    p.add_argument("--sare", required=True, help="table written by 'sare'")
    p.add_argument("--types", default=FIXTURE["types"], help="qid<TAB>type file")
    p.add_argument("--order", type=_names, required=True, help="comma-separated predictor order (covariate 0..J-1)")
    p.add_argument("--strict-types", action="store_true", help="only accept the six-category taxonomy")

    p = sub.add_parser("simmatrix", help="export one query's top-k similarity matrix as CSV")
    _common(p)
    _run_inputs(p)
    _store_inputs(p)
    p.add_argument("--query", required=True, help="query id")
    p.add_argument("--space", choices=("sparse", "dense"), default="dense")
    p.add_argument("--k", type=_positive_int, default="100")
    p.add_argument("--adjusted", action="store_true", help="weight by query-document dot products")
    return parser


# configuration merging ------------------------------------------------------


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise UsageError(f"unknown command {command!r}")


def _prescan(argv: Sequence[str]) -> tuple[str | None, str | None]:
    """The subcommand and ``--config`` value, found before full parsing."""
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults that flags override."""
    parser = build_parser()
    command, config = _prescan(argv)
    if config and command in COMMANDS:
        sub = _subparser(parser, command)
        known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        with _open_input(config) as fh:
            values = parse_key_values(fh)
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known:
                raise UsageError(f"{config}: unknown key {key!r} for '{command}'")
            action = known[dest]
            if action.nargs == 0:
                defaults[dest] = value.lower() in ("1", "true", "yes", "on")
            else:
                defaults[dest] = value
                action.required = False
        sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    return args


def explain(args: argparse.Namespace) -> str:
    lines = [f"# denseqpp {__version__} {args.command}"]
    for key, value in sorted(vars(args).items()):
        if key in ("explain", "command", "func"):
            continue
        if isinstance(value, tuple):
            value = ",".join(map(str, value))
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# output helpers -------------------------------------------------------------


def _open_input(path: str):
    if not Path(path).is_file():
        raise UsageError(f"input file not found: {path}")
    return open_text(path)


def _require(path: str | None, what: str) -> str:
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def header(args: argparse.Namespace, **params) -> dict[str, object]:
    out: dict[str, object] = {"denseqpp": __version__, "command": args.command, "seed": args.seed}
    out.update(params)
    if args.stamp:
        out["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    return out


def emit(path: str, write: Callable[[io.StringIO], None]) -> None:
    """Render the whole output first so an error never leaves a partial file behind."""
    buf = io.StringIO()
    write(buf)
    text = buf.getvalue()
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(target.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, target)


def _comment_header(sink, meta: dict) -> None:
    for key, value in meta.items():
        sink.write(f"# {key}: {value}\n")


def _stores(args, predictors):
    """Load only the vector stores the requested predictors need."""
    from .predictors import DENSE_PREDICTORS, SPARSE_PREDICTORS

    need_sparse = any(p in SPARSE_PREDICTORS for p in predictors)
    need_dense = any(p in DENSE_PREDICTORS for p in predictors)
    need_queries = "A-pairRatio" in predictors
    for flag, needed, path in (("--sparse", need_sparse, args.sparse), ("--dense", need_dense, args.dense),
                               ("--queries", need_queries, args.queries)):
        if needed and path is not None:
            _require(path, flag)
    sparse = read_vectors(args.sparse) if need_sparse and args.sparse else None
    dense = read_vectors(args.dense) if need_dense and args.dense else None
    queries = read_vectors(args.queries) if need_queries and args.queries else None
    check_inputs(predictors, sparse, dense, queries)
    return sparse, dense, queries


# subcommands ----------------------------------------------------------------


def cmd_predict(args) -> int:
    _require(args.run, "--run")
    params = {}
    if args.params:
        with _open_input(args.params) as fh:
            params = params_from_config(parse_key_values(fh), args.k)
    config = PredictorConfig(
        predictors=args.predictors, default_k=args.k, params=params,
        rsd=RsdParams(num_samples=args.rsd_samples, seed=args.seed), seed=args.seed,
    )
    sparse, dense, queries = _stores(args, config.predictors)
    rankings = read_run(args.run)
    table = compute_all(rankings, config, sparse_store=sparse, dense_store=dense, query_vecs=queries, jobs=args.jobs)
    meta = {"k": args.k, "rsd_samples": args.rsd_samples}
    for name in config.predictors:
        p = config.for_predictor(name)
        desc = f"k={p.k}"
        if p.tau is not None and name in ("pairRatio", "A-pairRatio"):
            desc += f" tau={p.tau.tau_upper},{p.tau.tau_lower}"
        if p.lam is not None and name in ("WAND(NQC)", "WD(NQC)"):
            desc += f" lambda={p.lam!r}"
        meta[f"param {name}"] = desc
    emit(args.out, lambda s: write_table(table, s, header(args, **meta)))
    if table.missing:
        log.warning("%d predictor value(s) undefined; see '# missing' header lines", len(table.missing))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = read_run(_require(args.run, "--run"))
    qrels = read_qrels(_require(args.qrels, "--qrels"))
    table = evaluate_run(run, qrels, args.metrics, rel_threshold=args.rel_threshold)
    if not table.query_ids:
        log.warning("no run query has judgments; the table is empty")
    meta = header(args, metrics=",".join(args.metrics), rel_threshold=args.rel_threshold)
    emit(args.out, lambda s: write_table(table, s, meta))
    return EXIT_OK


def _pick(names: tuple[str, ...], wanted: str, what: str) -> tuple[str, ...]:
    if wanted == "all":
        return names
    if wanted not in names:
        raise DataError(f"{what} {wanted!r} not in table columns {list(names)}")
    return (wanted,)


def cmd_correlate(args) -> int:
    pred = read_table(_require(args.predictions, "--predictions"), PredictorTable)
    eff = read_table(_require(args.effectiveness, "--effectiveness"), EffectivenessTable)
    preds = _pick(pred.names, args.predictor, "predictor")
    metrics = _pick(eff.names, args.metric, "metric")
    results = {(p, m): kendall_tau(pred.column(p), eff.column(m)) for p in preds for m in metrics}

    def write(s):
        _comment_header(s, header(args))
        cols = []
        for m in metrics:
            cols += [f"{m}:tau", f"{m}:p", f"{m}:n"]
        s.write("\t".join(["predictor"] + cols) + "\n")
        for p in preds:
            cells = []
            for m in metrics:
                r = results[(p, m)]
                cells += [repr(r.tau), repr(r.p_value), str(r.n)]
            s.write("\t".join([p] + cells) + "\n")

    emit(args.out, write)
    return EXIT_OK


def _grid(args) -> TuningGrid:
    if args.grid:
        with _open_input(args.grid) as fh:
            return grid_from_config(parse_key_values(fh))
    values = {"cutoffs": ",".join(args.cutoffs), "lambdas": ",".join(args.lambdas)}
    if args.tau_pairs != ("all",):
        values["tau_pairs"] = " ".join(args.tau_pairs)
    return grid_from_config(values)


def cmd_tune(args) -> int:
    grid = _grid(args)
    run = read_run(_require(args.run, "--run"))
    qrels = read_qrels(_require(args.qrels, "--qrels"))
    sparse, dense, queries = _stores(args, args.predictors)
    eff = evaluate_run(run, qrels, (args.metric,), rel_threshold=args.rel_threshold).column(args.metric)
    rsd = RsdParams(num_samples=args.rsd_samples, seed=args.seed)
    results = [
        tune(name, run, eff, grid, sparse_store=sparse, dense_store=dense, query_vecs=queries, rsd=rsd, seed=args.seed)
        for name in args.predictors
    ]
    meta = header(args, metric=args.metric, cutoffs=",".join(map(str, grid.cutoffs)),
                  tuning_queries=len(set(run) & set(eff)))

    def write(s):
        _comment_header(s, meta)
        for r in results:
            s.write(f"# {r.predictor}: kendall_tau {r.best_tau!r} over {len(r.trace)} point(s), "
                    f"{len(r.skipped)} skipped\n")
            for line in best_params_lines(r):
                s.write(line + "\n")

    emit(args.out, write)
    if args.trace:
        def write_traces(s):
            _comment_header(s, meta)
            for i, r in enumerate(results):
                buf = io.StringIO()
                write_trace(r, buf)
                lines = buf.getvalue().splitlines(keepends=True)
                s.writelines(lines if i == 0 else lines[1:])
        emit(args.trace, write_traces)
    return EXIT_OK


def cmd_sare(args) -> int:
    pred = read_table(_require(args.predictions, "--predictions"), PredictorTable)
    eff = read_table(_require(args.effectiveness, "--effectiveness"), EffectivenessTable)
    if args.metric not in eff.names:
        raise DataError(f"metric {args.metric!r} not in {list(eff.names)}")
    table = sare_table(pred, eff, args.metric)
    emit(args.out, lambda s: write_table(table, s, header(args, metric=args.metric)))
    return EXIT_OK


def cmd_lme(args) -> int:
    table = read_table(_require(args.sare, "--sare"), SareTable)
    types = read_query_types(_require(args.types, "--types"), strict=args.strict_types)
    design = build_design(table, types, args.order)
    selection = select_model(design)
    ensure_nested(selection)
    emit(args.out, lambda s: write_report(selection, design, s, header(args)))
    return EXIT_OK


def cmd_simmatrix(args) -> int:
    rankings = read_run(_require(args.run, "--run"))
    if args.query not in rankings:
        raise DataError(f"query {args.query!r} not in run")
    ranking = rankings[args.query]
    path = args.dense if args.space == "dense" else args.sparse
    store = read_vectors(_require(path, f"--{args.space}"))
    expected = VectorKind.DENSE if args.space == "dense" else VectorKind.SPARSE
    if store.kind is not expected:
        raise ConfigError(f"--{args.space} file holds {store.kind.value} vectors")
    k = min(args.k, len(ranking))
    w = build_sim_matrix(ranking, store, k)
    if args.adjusted:
        if args.space != "dense":
            raise ConfigError("--adjusted needs the dense space")
        queries = read_vectors(_require(args.queries, "--queries"))
        if args.query not in queries:
            raise DataError(f"no query vector for {args.query!r}")
        w = adjust_matrix(w, ranking, queries[args.query], store)

    def write(s):
        _comment_header(s, header(args, query=args.query, space=args.space, k=k, adjusted=args.adjusted))
        export_matrix_csv(w, s)

    emit(args.out, write)
    return EXIT_OK


COMMANDS = {
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "correlate": cmd_correlate,
    "tune": cmd_tune,
    "sare": cmd_sare,
    "lme": cmd_lme,
    "simmatrix": cmd_simmatrix,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="denseqpp: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        args = parse_args(argv)
        logging.getLogger().setLevel(logging.INFO if args.verbose else logging.WARNING)
        if args.explain:
            sys.stdout.write(explain(args))
            return EXIT_OK
        return COMMANDS[args.command](args)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except NumericalError as e:
        print(f"denseqpp: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as e:
        print(f"denseqpp: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, argparse.ArgumentTypeError) as e:
        print(f"denseqpp: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"denseqpp: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
