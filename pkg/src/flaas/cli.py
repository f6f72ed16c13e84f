"""Command line entry points.

  flaas serve       run the HTTP server
  flaas experiment  run a simulated experiment (in process or against a server)
  flaas device      run one standalone device against a server
  flaas report      fetch job metrics from a server

Exit codes: 0 success, 2 configuration error, 3 network error, 4 protocol
error (the server refused a request)."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time

from .config import load_server_config
from .errors import ConfigurationError, FlaasError, ProtocolError
from .sim import (
    ExperimentConfig,
    HttpHandle,
    compare_scenarios,
    build_world,
    device_drops_out,
    load_experiment_config,
    run_device_round,
    run_experiment,
)

EXIT_CONFIG = 2
EXIT_NETWORK = 3
EXIT_PROTOCOL = 4


def _load_tokens(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return {
            "customer": str(raw["customer"]),
            "devices": {int(k): str(v) for k, v in raw.get("devices", {}).items()},
        }
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"cannot read token file {path!r}: {exc}") from exc


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    config = load_server_config(args.config)
    if args.host:
        config = dataclasses.replace(config, host=args.host)
    if args.port:
        config = dataclasses.replace(config, port=args.port)
    if args.data_dir:
        config = dataclasses.replace(config, data_dir=args.data_dir)
    app = create_app(config)
    print(f"serving on {config.host}:{config.port}", flush=True)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


def cmd_experiment(args) -> int:
    config = load_experiment_config(args.config)
    handle = None
    if args.transport == "http":
        if not args.server or not args.tokens:
            raise ConfigurationError("http transport needs --server and --tokens")
        tokens = _load_tokens(args.tokens)
        handle = HttpHandle(args.server, tokens["customer"], tokens["devices"])
    if args.compare:
        if args.transport == "http":
            raise ConfigurationError("comparisons run in process; drop --transport http")
        summary = compare_scenarios(
            config, joint_mode=args.joint_mode, repeats=args.repeats, out_dir=args.out
        )
        for row in summary["rows"]:
            print(
                f"seed {row['seed']}: single {row['single_accuracy']:.4f} "
                f"joint {row['joint_accuracy']:.4f} delta {row['delta']:+.4f}"
            )
        print(
            f"mean single {summary['mean_single']:.4f}, mean joint "
            f"{summary['mean_joint']:.4f}, mean delta {summary['mean_delta']:+.4f}"
        )
        return 0
    result = run_experiment(config, handle=handle, out_dir=args.out, workers=args.workers)
    for row in result.metrics_rows:
        acc = "n/a" if row["accuracy"] is None else f"{row['accuracy']:.4f}"
        print(
            f"round {row['round']:>3} scope {row['scope']} accuracy {acc} "
            f"updates {row['n_updates']} {row['status']}"
        )
    if result.final_accuracy is not None:
        print(f"final accuracy: {result.final_accuracy:.4f}")
    if args.out:
        print(f"outputs written to {args.out}")
    return 0


def cmd_device(args) -> int:
    config = load_experiment_config(args.config)
    if not (0 <= args.device_id < config.num_devices):
        raise ConfigurationError(
            f"device id {args.device_id} outside fleet of {config.num_devices}"
        )
    world = build_world(config)
    sim = world.devices[args.device_id]
    handle = HttpHandle(args.server, args.token, {args.device_id: args.token})
    round_index = 1
    effective = world.job_config.effective_rounds
    while round_index <= effective:
        try:
            info = handle.selection(args.job, round_index)
        except ProtocolError as exc:
            if "not current" in str(exc):
                time.sleep(args.poll)
                continue
            if "completed" in str(exc) or "terminated" in str(exc):
                break
            raise
        if info.get("job_status") in ("completed", "terminated"):
            break
        if info["status"] != "Open":
            round_index += 1
            continue
        mine = args.device_id in info["selection"]
        dropped = device_drops_out(config.seed, round_index, args.device_id, config.dropout_rate)
        if mine and not dropped:
            downloads = [
                (config.scope_id, handle.get_model(args.job, config.scope_id, round_index - 1))
            ]
            bundle = run_device_round(sim, info, downloads)
            handle.submit(args.job, round_index, bundle.to_wire())
            print(f"round {round_index}: submitted", flush=True)
        else:
            print(f"round {round_index}: sitting out", flush=True)
        while True:
            info = handle.selection(args.job, round_index)
            if info["status"] != "Open":
                break
            time.sleep(args.poll)
        round_index += 1
    print("device done", flush=True)
    return 0


def cmd_report(args) -> int:
    handle = HttpHandle(args.server, args.token, {})
    rows = handle.metrics_rows(args.job)
    status = handle.job_status(args.job)
    print(f"job {args.job}: {status}, {len(rows)} metric rows")
    for row in rows:
        acc = "n/a" if row["accuracy"] is None else f"{row['accuracy']:.4f}"
        print(
            f"round {row['round']:>3} scope {row['scope']} accuracy {acc} "
            f"updates {row['n_updates']} {row['status']}"
        )
    if args.csv:
        text = handle.metrics_csv(args.job)
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"metrics written to {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flaas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP server")
    p.add_argument("--config", help="server config file (.toml or .json)")
    p.add_argument("--host", help="override bind host")
    p.add_argument("--port", type=int, help="override bind port")
    p.add_argument("--data-dir", help="override durable state directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("experiment", help="run a simulated experiment")
    p.add_argument("--config", required=True, help="experiment config file (.toml or .json)")
    p.add_argument("--out", help="directory for metrics.csv, timings.csv, config echo")
    p.add_argument("--transport", choices=("memory", "http"), default="memory")
    p.add_argument("--server", help="server base URL (http transport)")
    p.add_argument("--tokens", help="token file with customer and device tokens")
    p.add_argument("--workers", type=int, default=1, help="device threads per round")
    p.add_argument("--compare", action="store_true", help="compare single vs joint")
    p.add_argument("--repeats", type=int, default=3, help="seeds per comparison arm")
    p.add_argument("--joint-mode", choices=("data", "gradient", "model"), default="data")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("device", help="run one standalone device over HTTP")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--server", required=True, help="server base URL")
    p.add_argument("--token", required=True, help="this device's bearer token")
    p.add_argument("--device-id", type=int, required=True)
    p.add_argument("--job", required=True, help="job id to participate in")
    p.add_argument("--poll", type=float, default=0.2, help="poll interval seconds")
    p.set_defaults(func=cmd_device)

    p = sub.add_parser("report", help="fetch job metrics from a server")
    p.add_argument("--server", required=True, help="server base URL")
    p.add_argument("--token", required=True, help="customer bearer token")
    p.add_argument("--job", required=True, help="job id")
    p.add_argument("--csv", help="also write the metrics CSV here")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FlaasError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except Exception as exc:  # network stack errors from httpx land here
        if _is_network_error(exc):
            print(f"network error: {exc}", file=sys.stderr)
            return EXIT_NETWORK
        raise


def _is_network_error(exc: Exception) -> bool:
    try:
        import httpx
    except ImportError:  # pragma: no cover
        return False
    return isinstance(exc, (httpx.TransportError, httpx.InvalidURL))


if __name__ == "__main__":
    sys.exit(main())
