#!/usr/bin/env python3
"""End-to-end demo over a real HTTP server.

Starts `flaas serve` as a subprocess with generated bearer tokens, runs a
short joint experiment against it, prints the per-round metrics, and shuts
the server down. With --data-dir the server keeps its durable state so you
can restart it later and read the same job back.
"""

import argparse
import json
import socket
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import httpx

from flaas.sim import ExperimentConfig, HttpHandle, run_experiment


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rounds", type=int, default=5)
    parser.add_argument("--devices", type=int, default=10)
    parser.add_argument("--data-dir", help="durable server state directory")
    args = parser.parse_args(argv)

    config = ExperimentConfig(
        scenario="joint", mode="data", apps=("a", "b"),
        num_devices=args.devices, rounds=args.rounds, seed=42,
        num_classes=4, raw_dim=12, feature_dim=8,
        samples_per_device=30, test_samples=100,
        batch_size=10, learning_rate=0.05,
    )

    port = free_port()
    tokens = [{"token": "demo-customer", "role": "customer"}] + [
        {"token": f"demo-device-{d}", "role": "device", "device_id": d}
        for d in range(config.num_devices)
    ]
    with tempfile.TemporaryDirectory() as tmp:
        server_config = Path(tmp) / "server.json"
        server_config.write_text(json.dumps({
            "host": "127.0.0.1", "port": port,
            "data_dir": args.data_dir, "tokens": tokens,
        }))
        proc = subprocess.Popen(
            [sys.executable, "-m", "flaas.cli", "serve", "--config", str(server_config)],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
        )
        base = f"http://127.0.0.1:{port}"
        try:
            deadline = time.time() + 30
            while True:
                if proc.poll() is not None:
                    print("server failed to start", file=sys.stderr)
                    return 1
                try:
                    if httpx.get(base + "/healthz", timeout=1.0).status_code == 200:
                        break
                except httpx.TransportError:
                    if time.time() > deadline:
                        print("server did not come up in 30s", file=sys.stderr)
                        return 1
                    time.sleep(0.05)
            print(f"server up at {base}")

            handle = HttpHandle(
                base, "demo-customer",
                {d: f"demo-device-{d}" for d in range(config.num_devices)},
            )
            try:
                result = run_experiment(config, handle=handle)
            finally:
                handle.close()
            for row in result.metrics_rows:
                print(
                    f"round {row['round']:>3} accuracy {row['accuracy']:.4f} "
                    f"updates {row['n_updates']} {row['status']}"
                )
            print(f"job {result.job_id} final accuracy {result.final_accuracy:.4f}")
        finally:
            proc.terminate()
            proc.wait()
    return 0


if __name__ == "__main__":
    sys.exit(main())
