"""Command-line client for the experiment service.

The CLI marshals flags into service requests. By default it talks to the
FastAPI app in-process (no server needed); pass ``--server URL`` to target
a running instance instead. Exit codes: 0 success, 2 configuration error,
3 data error.

Verbs: run, grid, synth, report, serve.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # sync bridge into the in-process ASGI app; no socket, no server
    import warnings

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", category=DeprecationWarning)
        from starlette.testclient import TestClient

    from .service.app import app
    return TestClient(app, raise_server_exceptions=False)


def _fail(kind: str, message: str) -> int:
    print(f"error ({kind}): {message}", file=sys.stderr)
    return EXIT_CONFIG if kind == "config" else EXIT_DATA


def _post(server: str | None, path: str, payload: dict):
    with _client(server) as client:
        resp = client.post(path, json=payload)
    if resp.status_code == 200:
        return resp.json(), EXIT_OK
    try:
        body = resp.json()
    except json.JSONDecodeError:
        return None, _fail("data", f"HTTP {resp.status_code}: {resp.text[:200]}")
    if "error" in body:
        err = body["error"]
        return None, _fail(err.get("type", "data"), err.get("message", ""))
    # pydantic validation errors arrive as 422 detail lists
    return None, _fail("config", json.dumps(body.get("detail", body))[:500])


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------

def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--bundle", help="dataset bundle directory")
    p.add_argument("--synth-preset", help="synthetic preset name (e.g. cora-like)")
    p.add_argument("--synth", help="inline synthetic spec as JSON")
    p.add_argument("--arch", choices=["mlp", "gcn", "sage", "gat"])
    p.add_argument("--mode", choices=["gnn", "layerwise"])
    p.add_argument("--k", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--pool-dim", dest="pool_dim", type=int)
    p.add_argument("--batch-cap", dest="batch_cap", type=int)
    p.add_argument("--neighbor-cap", dest="neighbor_cap", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--early-stop", action="store_true",
                   help="shortcut for --patience 30")
    p.add_argument("--edge-keep", dest="edge_keep", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--residual", action="store_true", default=None)
    p.add_argument("--split-mode", dest="split_mode",
                   choices=["transductive", "inductive"])
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--train-per-class", dest="train_per_class", type=int)
    p.add_argument("--val-total", dest="val_total", type=int)
    p.add_argument("--attribution", choices=["sender", "receiver", "both"])
    p.add_argument("--log-events", dest="log_events", action="store_true",
                   default=None)


def _experiment_payload(args) -> dict:
    payload: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        payload.update(json.loads(path.read_text()))
    fields = ("bundle arch mode k rounds lr hidden heads pool_dim batch_cap "
              "neighbor_cap momentum weight_decay patience edge_keep seed "
              "repeats residual split_mode train_frac val_frac "
              "train_per_class val_total attribution log_events").split()
    for f in fields:
        v = getattr(args, f, None)
        if v is not None:
            payload[f] = v
    if args.early_stop:
        payload["patience"] = payload.get("patience") or 30
    if args.synth:
        payload["synthetic"] = json.loads(args.synth)
    if args.synth_preset:
        syn = payload.get("synthetic") or {}
        syn["preset"] = args.synth_preset
        payload["synthetic"] = syn
        payload.pop("bundle", None)
    return payload


def _print_run_summary(report: dict, bits: bool) -> None:
    ch = report["ledger_summary"]["channels"]
    print(f"micro-F1: {report['micro_f1_mean']:.4f} "
          f"+/- {report['micro_f1_std']:.4f} over seeds {report['seeds']}")
    print(f"rounds run per model: {report['rounds_run']}")
    print(f"c2c: {ch['c2c_bytes']} B ({ch['c2c_mb']:.4f} MB)"
          + (f" ({ch['c2c_bytes'] * 8 / 1e6:.4f} Mb)" if bits else ""))
    print(f"c2s: {ch['c2s_bytes']} B ({ch['c2s_mb']:.4f} MB)"
          + (f" ({ch['c2s_bytes'] * 8 / 1e6:.4f} Mb)" if bits else ""))


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def _cmd_run(args) -> int:
    try:
        payload = _experiment_payload(args)
    except (json.JSONDecodeError, FileNotFoundError) as e:
        return _fail("config", str(e))
    if args.save_models:
        payload["save_models_dir"] = args.save_models
    body, code = _post(args.server, "/runs", payload)
    if code != EXIT_OK:
        return code
    report = body["report"]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, sort_keys=True))
        print(f"report written to {args.out}")
    _print_run_summary(report, args.bits)
    return EXIT_OK


def _cmd_grid(args) -> int:
    try:
        payload = {"base": _experiment_payload(args)}
    except (json.JSONDecodeError, FileNotFoundError) as e:
        return _fail("config", str(e))
    if args.lr_grid:
        payload["lr_grid"] = [float(x) for x in args.lr_grid.split(",")]
    if args.hidden_grid:
        payload["hidden_grid"] = [int(x) for x in args.hidden_grid.split(",")]
    body, code = _post(args.server, "/grid", payload)
    if code != EXIT_OK:
        return code
    best = body["best_config"]
    print(f"best: lr={best['lr']} hidden={best['hidden']} "
          f"val_loss={body['best_val_loss']:.6f}")
    for row in body["table"]:
        print(f"  lr={row['lr']:<7} hidden={row['hidden']:<4} "
              f"val_loss={row['val_loss']:.6f} micro_f1={row['micro_f1']:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(body, sort_keys=True))
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec: dict = {}
    if args.synth:
        try:
            spec = json.loads(args.synth)
        except json.JSONDecodeError as e:
            return _fail("config", f"bad --synth JSON: {e}")
    for f in ("nodes", "classes", "homophily", "feature_dim", "avg_degree",
              "seed", "class_sep", "edges"):
        v = getattr(args, f, None)
        if v is not None:
            spec[f] = v
    if args.preset:
        spec["preset"] = args.preset
    body, code = _post(args.server, "/synth", {"spec": spec,
                                               "out_dir": args.out_dir})
    if code != EXIT_OK:
        return code
    print(f"bundle written to {body['out_dir']}: {body['num_nodes']} nodes, "
          f"{body['undirected_edges']} edges, I={body['feature_dim']}, "
          f"C={body['num_classes']}")
    return EXIT_OK


def _cmd_report(args) -> int:
    payload = {"report_paths": args.reports, "out_dir": args.out_dir,
               "channel": args.channel}
    body, code = _post(args.server, "/reports/figures", payload)
    if code != EXIT_OK:
        return code
    for p in body["written"]:
        print(p)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn
    from .service.app import app
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fdgnn",
        description="Distributed-graph GNN training simulator client")
    ap.add_argument("--server", help="remote service URL (default: in-process)")
    sub = ap.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="run one experiment")
    _add_experiment_flags(run_p)
    run_p.add_argument("--out", help="write the full report JSON here")
    run_p.add_argument("--save-models", help="directory for model checkpoints")
    run_p.add_argument("--bits", action="store_true",
                       help="also print channel totals in megabits")
    run_p.set_defaults(func=_cmd_run)

    grid_p = sub.add_parser("grid", help="hyperparameter grid search")
    _add_experiment_flags(grid_p)
    grid_p.add_argument("--lr-grid", help="comma-separated learning rates")
    grid_p.add_argument("--hidden-grid", help="comma-separated hidden sizes")
    grid_p.add_argument("--out", help="write grid table JSON here")
    grid_p.set_defaults(func=_cmd_grid)

    synth_p = sub.add_parser("synth", help="generate a synthetic bundle")
    synth_p.add_argument("--out-dir", required=True)
    synth_p.add_argument("--preset")
    synth_p.add_argument("--synth", help="spec as JSON")
    synth_p.add_argument("--nodes", type=int)
    synth_p.add_argument("--classes", type=int)
    synth_p.add_argument("--homophily", type=float)
    synth_p.add_argument("--feature-dim", dest="feature_dim", type=int)
    synth_p.add_argument("--avg-degree", dest="avg_degree", type=float)
    synth_p.add_argument("--class-sep", dest="class_sep", type=float)
    synth_p.add_argument("--edges", type=int)
    synth_p.add_argument("--seed", type=int)
    synth_p.set_defaults(func=_cmd_synth)

    rep_p = sub.add_parser("report", help="emit per-client figure CSVs")
    rep_p.add_argument("--reports", nargs="+", required=True,
                       help="run-report JSON files")
    rep_p.add_argument("--out-dir", required=True)
    rep_p.add_argument("--channel", default="total",
                       choices=["total", "c2c", "c2s"])
    rep_p.set_defaults(func=_cmd_report)

    serve_p = sub.add_parser("serve", help="start the HTTP service")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.set_defaults(func=_cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
