"""Experiment harness: world construction, reproducibility, CLI plumbing."""

import json

import numpy as np
import pytest

from flaas.cli import EXIT_CONFIG, EXIT_NETWORK, main
from flaas.core import derive_seed, init_model
from flaas.errors import ConfigurationError
from flaas.sim import (
    ExperimentConfig,
    _column_blocks,
    build_world,
    compare_scenarios,
    device_drops_out,
    load_experiment_config,
    run_experiment,
)


def tiny_config(**kw):
    base = dict(scenario="single", apps=("alpha",), num_devices=4, rounds=2,
                seed=3, num_classes=3, raw_dim=10, feature_dim=6,
                samples_per_device=24, test_samples=60, batch_size=8,
                learning_rate=0.05)
    base.update(kw)
    return ExperimentConfig(**base)


# --- world construction ---------------------------------------------------------


def test_world_shapes_single():
    config = tiny_config()
    world = build_world(config)
    assert sorted(world.devices) == [0, 1, 2, 3]
    for sim in world.devices.values():
        shard = sim.state.shards["alpha"]
        assert shard.features.shape == (24, 6)
    assert len(world.test_batch) == 60
    assert world.job_config.scenario == "single"
    assert world.job_config.members == ()


def test_world_shapes_joint():
    world = build_world(tiny_config(scenario="joint", mode="data", apps=("a", "b")))
    sim = world.devices[0]
    assert set(sim.state.shards) == {"a", "b"}
    assert world.job_config.scope_id == "group"
    assert world.job_config.members == ("a", "b")
    assert ("a", "group", "ShareData") in world.job_config.grants


def test_world_shapes_new_problem():
    config = tiny_config(scenario="new_problem", mode="data", apps=("primary", "helper"))
    world = build_world(config)
    sim = world.devices[0]
    # the primary holds its own column block; the helper contributes the rest
    assert sim.state.shards["primary"].features.shape == (24, 3)
    assert sim.columns["helper"].features.shape == (24, 3)
    assert np.array_equal(sim.columns["helper"].keys, sim.state.shard_keys["primary"])
    assert world.job_config.feature_dim == 6
    assert world.job_config.members == ("helper",)


def test_world_is_deterministic():
    a = build_world(tiny_config())
    b = build_world(tiny_config())
    c = build_world(tiny_config(seed=4))
    for d in range(4):
        assert np.array_equal(
            a.devices[d].state.shards["alpha"].features,
            b.devices[d].state.shards["alpha"].features,
        )
    assert not np.array_equal(
        a.devices[0].state.shards["alpha"].features,
        c.devices[0].state.shards["alpha"].features,
    )
    assert np.array_equal(a.test_batch.features, b.test_batch.features)


def test_devices_hold_distinct_shards():
    # partition disjointness is proven at the data layer; here just guard
    # against every device receiving the same slice
    world = build_world(tiny_config())
    for d in range(1, 4):
        assert not np.array_equal(
            world.devices[0].state.shards["alpha"].features,
            world.devices[d].state.shards["alpha"].features,
        )


def test_column_blocks_cover_every_column():
    blocks = _column_blocks(7, 2)
    assert blocks[0] == slice(0, 4) and blocks[1] == slice(4, 7)
    assert _column_blocks(6, 3) == [slice(0, 2), slice(2, 4), slice(4, 6)]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        tiny_config(scenario="joint").validate()  # no mode
    with pytest.raises(ConfigurationError):
        tiny_config(scenario="new_problem", mode="gradient", apps=("a", "b")).validate()
    with pytest.raises(ConfigurationError):
        tiny_config(apps=("a", "a")).validate()
    with pytest.raises(ConfigurationError):
        tiny_config(dropout_rate=1.0).validate()


def test_dropout_draw_is_deterministic():
    assert not any(device_drops_out(1, r, d, 0.0) for r in range(3) for d in range(3))
    draws = [device_drops_out(9, 2, d, 0.5) for d in range(64)]
    assert draws == [device_drops_out(9, 2, d, 0.5) for d in range(64)]
    assert any(draws) and not all(draws)


# --- running experiments -----------------------------------------------------------


def test_experiment_is_reproducible(tmp_path):
    config = tiny_config()
    first = run_experiment(config, out_dir=str(tmp_path / "run"))
    second = run_experiment(config)
    assert first.metrics_csv == second.metrics_csv
    assert len(first.history) == 3  # init + 2 rounds
    for a, b in zip(first.history, second.history):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)
    assert first.final_accuracy is not None
    # history starts at the seeded initial model
    expected = init_model(6, 3, derive_seed(3, "init", "alpha"))
    assert np.array_equal(first.history[0].weights, expected.weights)

    out = tmp_path / "run"
    # read_bytes: the CSV is byte-identical, including \r\n row endings
    assert (out / "metrics.csv").read_bytes().decode() == first.metrics_csv
    assert json.loads((out / "config.json").read_text())["seed"] == 3
    timing_lines = (out / "timings.csv").read_text().splitlines()
    assert timing_lines[0] == "round,seed,train_ms,aggregate_ms,serialize_ms"
    assert len(timing_lines) == 3


def test_experiment_worker_threads_do_not_change_results():
    config = tiny_config(num_devices=6)
    sequential = run_experiment(config, workers=1)
    threaded = run_experiment(config, workers=4)
    assert sequential.metrics_csv == threaded.metrics_csv
    for a, b in zip(sequential.history, threaded.history):
        assert np.array_equal(a.weights, b.weights)


def test_experiment_joint_and_new_problem_scenarios_run():
    joint = run_experiment(tiny_config(scenario="joint", mode="model", apps=("a", "b")))
    assert joint.scope == "group"
    assert joint.final_accuracy is not None
    aug = run_experiment(
        tiny_config(scenario="new_problem", mode="data", apps=("primary", "helper"))
    )
    assert aug.scope == "primary"
    assert aug.final_accuracy is not None


def test_experiment_with_dropouts_still_completes():
    result = run_experiment(tiny_config(rounds=3, dropout_rate=0.5))
    statuses = {row["status"] for row in result.metrics_rows}
    assert statuses <= {"Aggregated", "TimedOut"}
    assert max(row["round"] for row in result.metrics_rows) == 3


def test_compare_scenarios_validates_inputs():
    with pytest.raises(ConfigurationError):
        compare_scenarios(tiny_config(apps=("a", "b")), repeats=2)
    with pytest.raises(ConfigurationError):
        compare_scenarios(tiny_config(apps=("solo",)), repeats=3)


def test_compare_scenarios_pairs_seeds(tmp_path):
    summary = compare_scenarios(
        tiny_config(apps=("a", "b"), rounds=1), repeats=3, out_dir=str(tmp_path)
    )
    assert summary["repeats"] == 3
    assert len(summary["rows"]) == 3
    seeds = [row["seed"] for row in summary["rows"]]
    assert seeds == [derive_seed(3, "repeat", i) for i in range(3)]
    deltas = [row["delta"] for row in summary["rows"]]
    assert summary["mean_delta"] == pytest.approx(float(np.mean(deltas)))
    assert (tmp_path / "comparison.csv").exists()
    assert json.loads((tmp_path / "comparison.json").read_text())["repeats"] == 3


# --- config files and CLI ---------------------------------------------------------


def test_load_experiment_config_toml_and_json(tmp_path):
    toml_path = tmp_path / "exp.toml"
    toml_path.write_text(
        'scenario = "single"\nrounds = 2\nseed = 5\nnum_devices = 3\n'
        "samples_per_device = 12\nnum_classes = 3\nraw_dim = 8\nfeature_dim = 4\n"
        "test_samples = 30\n"
    )
    config = load_experiment_config(str(toml_path))
    assert config.rounds == 2 and config.num_devices == 3

    json_path = tmp_path / "exp.json"
    json_path.write_text(json.dumps(tiny_config().to_dict()))
    assert load_experiment_config(str(json_path)) == tiny_config()


def test_load_experiment_config_failures(tmp_path):
    with pytest.raises(ConfigurationError):
        load_experiment_config(str(tmp_path / "missing.json"))
    odd = tmp_path / "exp.yaml"
    odd.write_text("rounds: 2")
    with pytest.raises(ConfigurationError):
        load_experiment_config(str(odd))
    bad = tmp_path / "exp.json"
    bad.write_text('{"scenario": "mystery"}')
    with pytest.raises(ConfigurationError):
        load_experiment_config(str(bad))


def test_cli_experiment_runs_and_writes_outputs(tmp_path, capsys):
    config_path = tmp_path / "exp.json"
    config_path.write_text(json.dumps(tiny_config().to_dict()))
    out_dir = tmp_path / "out"
    code = main(["experiment", "--config", str(config_path), "--out", str(out_dir)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "round   1 scope alpha" in printed
    assert "final accuracy:" in printed
    assert (out_dir / "metrics.csv").exists()


def test_cli_exit_codes(tmp_path):
    # missing config file -> configuration error
    assert main(["experiment", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    # http transport without a server is a configuration error
    config_path = tmp_path / "exp.json"
    config_path.write_text(json.dumps(tiny_config().to_dict()))
    assert main(
        ["experiment", "--config", str(config_path), "--transport", "http"]
    ) == EXIT_CONFIG
    # nothing listens on the discard port: network failure
    assert main(
        ["report", "--server", "http://127.0.0.1:9", "--token", "t", "--job", "job-0001"]
    ) == EXIT_NETWORK
