"""Command-line entry point: ``ndcp <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .conformal import TcpConfig, tcp_predict
from .dataset import load_csv, load_query_csv
from .errors import NDCPError
from .federation import DEFAULT_TIMEOUT_MS, Coordinator, SourceNodeState, parse_address, serve_source
from .harness import PARTIAL_MARKER, load_config, replay, run_experiment, summarize
from .metrics import fmt6

log = logging.getLogger("ndcp")


def _features_per_split(text: str):
    return int(text) if text.isdigit() else text


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--label-column", default="label", help="name of the binary label column (default: label)")
    p.add_argument("--encoding", choices=("onehot", "ordinal"), default="onehot",
                   help="encoding for categorical feature columns (default: onehot)")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for forests and smoothing (default: 0)")
    p.add_argument("--n-trees", type=int, default=100, help="trees per forest (default: 100)")
    p.add_argument("--max-depth", type=int, default=16, help="maximum tree depth (default: 16)")
    p.add_argument("--min-leaf", type=int, default=2, help="minimum rows per leaf (default: 2)")
    p.add_argument("--features-per-split", type=_features_per_split, default="sqrt",
                   help="'sqrt', 'all' or an integer (default: sqrt)")
    p.add_argument("--score-direction", choices=("conventional", "paper_literal"), default="conventional",
                   help="nonconformity direction (default: conventional)")


def _tcp_config(args) -> TcpConfig:
    cfg = TcpConfig.from_seed(args.seed, n_trees=args.n_trees, max_depth=args.max_depth,
                              min_leaf=args.min_leaf, features_per_split=args.features_per_split)
    return TcpConfig(cfg.forest, args.score_direction, cfg.smoothing_seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ndcp",
        description="Transductive conformal prediction aggregated across non-disclosing data sources.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--porcelain", action="store_true",
                        help="machine-readable stdout (CSV or a single JSON line)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--porcelain", action="store_true", default=argparse.SUPPRESS,
                        help="machine-readable stdout (CSV or a single JSON line)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("inspect", parents=[common],
                       help="print size, dimensionality and class balance of a CSV")
    p.add_argument("path", help="CSV file with a header row")
    _add_data_args(p)

    p = sub.add_parser("predict", parents=[common],
                       help="transductive p-values for query objects from one training file")
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--query", required=True, help="CSV of objects to predict (same raw columns as --train)")
    p.add_argument("--out", help="write predictions here instead of stdout")
    _add_data_args(p)
    _add_model_args(p)

    p = sub.add_parser("serve-source", parents=[common],
                       help="hold a private dataset and answer p-value queries")
    p.add_argument("--data", required=True, help="private training CSV")
    p.add_argument("--host", default="127.0.0.1", help="listen address (default: 127.0.0.1)")
    p.add_argument("--port", type=int, required=True, help="listen port")
    _add_data_args(p)
    _add_model_args(p)

    p = sub.add_parser("coordinate", parents=[common],
                       help="query every source and average their p-values")
    p.add_argument("--sources", required=True, help="comma-separated host:port list")
    p.add_argument("--query", required=True, help="CSV of numeric query features")
    p.add_argument("--out", required=True, help="output CSV of aggregated p-values")
    p.add_argument("--drop-column", default=None, help="query column to ignore (e.g. a label)")
    p.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS,
                   help=f"per-prediction timeout in ms (default: {DEFAULT_TIMEOUT_MS})")
    p.add_argument("--first-request-id", type=int, default=0, help="id of the first request (default: 0)")
    p.add_argument("--shutdown", action="store_true", help="send shutdown to the sources when done")

    p = sub.add_parser("run", parents=[common],
                       help="run an experiment described by a TOML config")
    p.add_argument("--config", required=True, help="experiment TOML file")
    p.add_argument("--out", required=True, help="report directory")

    p = sub.add_parser("replay", parents=[common],
                       help="re-run the experiment recorded in a manifest.json")
    p.add_argument("--manifest", required=True, help="manifest.json from an earlier run")
    p.add_argument("--out", required=True, help="report directory")
    return parser


def _write_pvalues(rows, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["index", "p0", "p1"])
    for i, p in enumerate(rows):
        w.writerow([i, repr(float(p[0])), repr(float(p[1]))])


def _emit_predictions(rows, out_path: str | None) -> None:
    if out_path is None:
        _write_pvalues(rows, sys.stdout)
    else:
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            _write_pvalues(rows, fh)


def cmd_inspect(args) -> int:
    data = load_csv(args.path, args.label_column, args.encoding)
    n0, n1 = data.class_counts()
    if args.porcelain:
        print(json.dumps({"n": data.n, "p": data.p, "class0": n0, "class1": n1}))
    else:
        print(f"n = {data.n}")
        print(f"p = {data.p}")
        print(f"class balance: 0 -> {n0} ({n0 / data.n:.1%}), 1 -> {n1} ({n1 / data.n:.1%})")
    return 0


def cmd_predict(args) -> int:
    train = load_csv(args.train, args.label_column, args.encoding)
    X = load_query_csv(args.query, train.encoder)
    cfg = _tcp_config(args)
    _emit_predictions([tcp_predict(train, x, cfg, i) for i, x in enumerate(X)], args.out)
    return 0


def cmd_serve_source(args) -> int:
    data = load_csv(args.data, args.label_column, args.encoding)
    serve_source(SourceNodeState(data, _tcp_config(args), (args.host, args.port)))
    return 0


def cmd_coordinate(args) -> int:
    addresses = [parse_address(a) for a in args.sources.split(",") if a.strip()]
    X = load_query_csv(args.query, drop_column=args.drop_column)
    coord = Coordinator(addresses, args.timeout_ms, args.first_request_id)
    try:
        coord.connect()
        rows = coord.predict_many(X)
        if args.shutdown:
            coord.shutdown_sources()
    finally:
        coord.close()
    _emit_predictions(rows, args.out)
    return 0


def _report(result, args) -> None:
    rows = summarize(result)
    if args.porcelain:
        print(json.dumps({"out": str(args.out), "records": len(result.results),
                          "scenarios": {r[0]: {"median_efficiency": r[1], "median_validity": r[2]} for r in rows}}))
        return
    print(f"{'scenario':<14} {'median EFF':>11} {'median VAL':>11}")
    for label, eff, val, _ in rows:
        print(f"{label:<14} {fmt6(eff):>11} {fmt6(val):>11}")
    print(f"reports written to {args.out}")


def cmd_run(args) -> int:
    result = run_experiment(load_config(args.config), args.out)
    _report(result, args)
    return 0


def cmd_replay(args) -> int:
    result = replay(args.manifest, args.out)
    _report(result, args)
    return 0


COMMANDS = {
    "inspect": cmd_inspect,
    "predict": cmd_predict,
    "serve-source": cmd_serve_source,
    "coordinate": cmd_coordinate,
    "run": cmd_run,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    level = os.environ.get("NDCP_LOG", "warn").upper()
    logging.basicConfig(level={"WARN": "WARNING"}.get(level, level) if level in
                        ("ERROR", "WARN", "WARNING", "INFO", "DEBUG") else "WARNING",
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (NDCPError, OSError, ValueError, KeyError) as exc:
        print(f"ndcp {args.command}: {exc}", file=sys.stderr)
        if args.command in ("run", "replay") and (Path(args.out) / PARTIAL_MARKER).exists():
            print(f"partial results left in {args.out}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
