"""Numerical core: oracle checks and algebraic properties.

Reference values are computed by independent routes (closed-form softmax
results, a pure-Python loss, finite differences, brute-force loops) rather
than by calling the code under test twice.
"""

import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flaas.core import (
    GradientVector,
    LabeledBatch,
    ModelParams,
    TrainConfig,
    WEIGHT_INIT_RANGE,
    aggregate_gradients,
    derive_seed,
    evaluate,
    extract_features,
    federated_aggregate,
    from_bytes,
    gradient,
    init_model,
    iter_batches,
    local_train,
    loss,
    make_extractor,
    predict,
    sgd_step,
    to_bytes,
)
from flaas.errors import ConfigurationError, ContractError, ProtocolError

from conftest import random_batch, random_model


# --- seed derivation ---------------------------------------------------------


def test_derive_seed_frozen_values():
    # frozen from first implementation; any change breaks stored experiments
    assert derive_seed(0) == 2033344993903900207
    assert derive_seed(0, "init", "alpha") == 3574399476120845705
    assert derive_seed(7, "select", 3) == 2597196753159236793


def test_derive_seed_distinguishes_parts():
    assert derive_seed(1, 2) != derive_seed(12)
    assert derive_seed("a", "b") != derive_seed("ab")
    assert derive_seed(1, "x") != derive_seed("x", 1)


@given(st.lists(st.integers(min_value=-(2**40), max_value=2**40), min_size=1, max_size=4))
def test_derive_seed_in_63_bit_range(parts):
    value = derive_seed(*parts)
    assert 0 <= value < 2**63


# --- dataclass validation ----------------------------------------------------


def test_model_params_rejects_non_finite():
    with pytest.raises(ContractError):
        ModelParams(weights=np.array([[np.nan]]), biases=np.array([0.0]))
    with pytest.raises(ContractError):
        ModelParams(weights=np.array([[1.0]]), biases=np.array([np.inf]))


def test_model_params_rejects_mismatched_shapes():
    with pytest.raises(ContractError):
        ModelParams(weights=np.zeros((3, 2)), biases=np.zeros(4))


def test_model_params_arrays_read_only():
    m = ModelParams(weights=np.zeros((2, 2)), biases=np.zeros(2))
    with pytest.raises(ValueError):
        m.weights[0, 0] = 1.0


def test_labeled_batch_rejects_bad_labels():
    with pytest.raises(ContractError):
        LabeledBatch(features=np.zeros((2, 3)), labels=np.array([0, -1]))
    with pytest.raises(ContractError):
        LabeledBatch(features=np.zeros((2, 3)), labels=np.array([0]))


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0, batch_size=1, learning_rate=0.1, seed=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=1, batch_size=1, learning_rate=0.0, seed=0)


# --- initialization ----------------------------------------------------------


def test_init_model_frozen_bytes():
    m = init_model(3, 2, seed=derive_seed(42, "init", "scope"))
    digest = hashlib.sha256(to_bytes(m)).hexdigest()
    assert digest == "899b068c255456f05a68e24ff639c7b19d4805fe8e79746778bda07837f8f0f9"


def test_init_model_bounds_and_zero_biases():
    m = init_model(40, 7, seed=5)
    assert np.all(np.abs(m.weights) <= WEIGHT_INIT_RANGE)
    assert np.all(m.biases == 0.0)
    assert m.feature_dim == 40 and m.num_classes == 7


def test_init_model_deterministic_and_seed_sensitive():
    a = init_model(6, 3, seed=9)
    b = init_model(6, 3, seed=9)
    c = init_model(6, 3, seed=10)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)


def test_init_model_rejects_bad_dims():
    with pytest.raises(ConfigurationError):
        init_model(0, 2, seed=0)
    with pytest.raises(ConfigurationError):
        init_model(4, 1, seed=0)


# --- predict -----------------------------------------------------------------


def test_predict_closed_form_two_thirds():
    # zero weights, biases (ln 2, 0): softmax = (2/3, 1/3) for any input
    m = ModelParams(weights=np.zeros((3, 2)), biases=np.array([math.log(2.0), 0.0]))
    probs = predict(m, np.array([[0.4, -1.0, 2.5], [0.0, 0.0, 0.0]]))
    assert np.allclose(probs, [[2 / 3, 1 / 3], [2 / 3, 1 / 3]], atol=1e-15)


def test_predict_survives_huge_logits():
    m = ModelParams(weights=np.array([[1e4, -1e4]]), biases=np.zeros(2))
    probs = predict(m, np.array([[1.0]]))
    assert np.all(np.isfinite(probs))
    assert probs[0, 0] == pytest.approx(1.0)


def test_predict_single_row_shape():
    m = ModelParams(weights=np.zeros((2, 3)), biases=np.zeros(3))
    assert predict(m, np.array([1.0, 2.0])).shape == (3,)


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(2, 5), st.integers(1, 7))
def test_predict_rows_are_distributions(seed, d, c, n):
    rng = np.random.default_rng(seed)
    probs = predict(random_model(rng, d, c), rng.normal(size=(n, d)))
    assert probs.shape == (n, c)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9)


# --- loss ---------------------------------------------------------------------


def _python_loss(model: ModelParams, batch: LabeledBatch) -> float:
    """Independent scalar-arithmetic reference implementation."""
    w = model.weights.tolist()
    b = model.biases.tolist()
    total = 0.0
    for row, label in zip(batch.features.tolist(), batch.labels.tolist()):
        logits = [
            sum(row[i] * w[i][c] for i in range(len(row))) + b[c]
            for c in range(model.num_classes)
        ]
        peak = max(logits)
        exps = [math.exp(v - peak) for v in logits]
        total += -math.log(exps[label] / sum(exps))
    return total / len(batch.labels)


def test_loss_matches_pure_python_reference():
    rng = np.random.default_rng(11)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        c = int(rng.integers(2, 5))
        n = int(rng.integers(1, 9))
        m = random_model(rng, d, c)
        batch = random_batch(rng, n, d, c)
        assert loss(m, batch) == pytest.approx(_python_loss(m, batch), abs=1e-9)


def test_loss_uniform_model_is_log_c():
    m = ModelParams(weights=np.zeros((4, 5)), biases=np.zeros(5))
    batch = LabeledBatch(features=np.ones((3, 4)), labels=np.array([0, 2, 4]))
    assert loss(m, batch) == pytest.approx(math.log(5.0), abs=1e-12)


def test_loss_rejects_out_of_range_label():
    m = ModelParams(weights=np.zeros((2, 2)), biases=np.zeros(2))
    batch = LabeledBatch(features=np.zeros((1, 2)), labels=np.array([3]))
    with pytest.raises(ContractError):
        loss(m, batch)


# --- gradient ------------------------------------------------------------------


def _fd_gradient(model: ModelParams, batch: LabeledBatch, h: float = 1e-5):
    """Central finite differences of the loss, component by component."""
    dw = np.zeros_like(model.weights)
    db = np.zeros_like(model.biases)
    w, b = model.weights.copy(), model.biases.copy()
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            wp, wm = w.copy(), w.copy()
            wp[i, j] += h
            wm[i, j] -= h
            dw[i, j] = (
                loss(ModelParams(weights=wp, biases=b), batch)
                - loss(ModelParams(weights=wm, biases=b), batch)
            ) / (2 * h)
    for j in range(b.shape[0]):
        bp, bm = b.copy(), b.copy()
        bp[j] += h
        bm[j] -= h
        db[j] = (
            loss(ModelParams(weights=w, biases=bp), batch)
            - loss(ModelParams(weights=w, biases=bm), batch)
        ) / (2 * h)
    return dw, db


def _assert_close_rel(analytic: np.ndarray, fd: np.ndarray, tol: float):
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
    assert np.all(np.abs(analytic - fd) <= tol * scale)


def test_gradient_matches_finite_differences_sample():
    rng = np.random.default_rng(23)
    for _ in range(10):
        d = int(rng.integers(1, 5))
        c = int(rng.integers(2, 5))
        n = int(rng.integers(1, 7))
        m = random_model(rng, d, c)
        batch = random_batch(rng, n, d, c)
        g = gradient(m, batch)
        fdw, fdb = _fd_gradient(m, batch)
        _assert_close_rel(g.d_weights, fdw, 1e-5)
        _assert_close_rel(g.d_biases, fdb, 1e-5)


def test_gradient_reports_loss_and_count(rng):
    m = random_model(rng, 4, 3)
    batch = random_batch(rng, 6, 4, 3)
    g = gradient(m, batch)
    assert g.sample_count == 6
    assert g.loss_at_point == pytest.approx(loss(m, batch), abs=1e-15)


def test_gradient_zero_at_exact_fit():
    # one-hot rows with huge weights: probabilities saturate, gradient ~ 0
    m = ModelParams(weights=np.eye(3) * 50.0, biases=np.zeros(3))
    batch = LabeledBatch(features=np.eye(3), labels=np.array([0, 1, 2]))
    g = gradient(m, batch)
    assert np.all(np.abs(g.d_weights) < 1e-12)
    assert np.all(np.abs(g.d_biases) < 1e-12)


def test_gradient_does_not_mutate_inputs(rng):
    m = random_model(rng, 3, 3)
    batch = random_batch(rng, 4, 3, 3)
    w_before = m.weights.copy()
    x_before = batch.features.copy()
    gradient(m, batch)
    assert np.array_equal(m.weights, w_before)
    assert np.array_equal(batch.features, x_before)


# --- sgd_step / local_train ------------------------------------------------------


def test_sgd_step_exact_arithmetic(rng):
    m = random_model(rng, 3, 2)
    g = gradient(m, random_batch(rng, 5, 3, 2))
    out = sgd_step(m, g, 0.1)
    assert np.array_equal(out.weights, m.weights - 0.1 * g.d_weights)
    assert np.array_equal(out.biases, m.biases - 0.1 * g.d_biases)


def test_sgd_step_rejects_shape_mismatch(rng):
    m = random_model(rng, 3, 2)
    g = GradientVector(
        d_weights=np.zeros((2, 2)), d_biases=np.zeros(2), sample_count=1, loss_at_point=0.0
    )
    with pytest.raises(ContractError):
        sgd_step(m, g, 0.1)


def test_iter_batches_partition():
    rng = np.random.default_rng(3)
    batches = list(iter_batches(10, 3, rng))
    assert [len(b) for b in batches] == [3, 3, 3, 1]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))


def test_local_train_matches_manual_replay(rng):
    m = random_model(rng, 4, 3)
    data = random_batch(rng, 11, 4, 3)
    config = TrainConfig(epochs=2, batch_size=4, learning_rate=0.05, seed=99)

    replay_rng = np.random.default_rng(99)
    expected = m
    for _ in range(2):
        for idx in iter_batches(11, 4, replay_rng):
            sub = LabeledBatch(features=data.features[idx], labels=data.labels[idx])
            expected = sgd_step(expected, gradient(expected, sub), 0.05)

    got = local_train(m, data, config)
    assert np.array_equal(got.weights, expected.weights)
    assert np.array_equal(got.biases, expected.biases)


def test_local_train_deterministic(rng):
    m = random_model(rng, 3, 2)
    data = random_batch(rng, 9, 3, 2)
    config = TrainConfig(epochs=3, batch_size=2, learning_rate=0.02, seed=7)
    a = local_train(m, data, config)
    b = local_train(m, data, config)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.biases, b.biases)


def test_local_train_reduces_loss(rng):
    m = random_model(rng, 5, 3)
    data = random_batch(rng, 60, 5, 3)
    config = TrainConfig(epochs=20, batch_size=10, learning_rate=0.5, seed=1)
    assert loss(local_train(m, data, config), data) < loss(m, data)


# --- federated_aggregate ----------------------------------------------------------


def test_aggregate_hand_example_quarter():
    a = ModelParams(weights=np.zeros((1, 2)), biases=np.zeros(2))
    b = ModelParams(weights=np.ones((1, 2)), biases=np.ones(2))
    merged = federated_aggregate([(a, 1), (b, 3)])
    assert merged.weights[0, 0] == pytest.approx(0.75, abs=1e-15)
    assert merged.biases[0] == pytest.approx(0.75, abs=1e-15)


def test_aggregate_single_update_bit_exact(rng):
    m = random_model(rng, 6, 4)
    out = federated_aggregate([(m, 17)])
    assert np.array_equal(out.weights, m.weights)
    assert np.array_equal(out.biases, m.biases)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.lists(st.integers(1, 1000), min_size=2, max_size=6))
def test_aggregate_identical_inputs_exact(seed, d, counts):
    rng = np.random.default_rng(seed)
    m = random_model(rng, d, 3)
    out = federated_aggregate([(m, n) for n in counts])
    assert np.array_equal(out.weights, m.weights)
    assert np.array_equal(out.biases, m.biases)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_aggregate_permutation_within_tolerance(seed, k):
    rng = np.random.default_rng(seed)
    updates = [(random_model(rng, 3, 3), int(rng.integers(1, 500))) for _ in range(k)]
    base = federated_aggregate(updates)
    perm = [updates[i] for i in rng.permutation(k)]
    other = federated_aggregate(perm)
    assert np.all(np.abs(base.weights - other.weights) < 1e-12)
    assert np.all(np.abs(base.biases - other.biases) < 1e-12)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_aggregate_stays_in_convex_hull(seed, k):
    rng = np.random.default_rng(seed)
    updates = [(random_model(rng, 2, 2), int(rng.integers(1, 100))) for _ in range(k)]
    merged = federated_aggregate(updates)
    stack = np.stack([u.weights for u, _ in updates])
    eps = 1e-12
    assert np.all(merged.weights >= stack.min(axis=0) - eps)
    assert np.all(merged.weights <= stack.max(axis=0) + eps)


def test_aggregate_weighted_mean_oracle():
    # independent numpy.average route on random instances
    rng = np.random.default_rng(5)
    for _ in range(20):
        k = int(rng.integers(1, 6))
        updates = [(random_model(rng, 3, 2), int(rng.integers(1, 50))) for _ in range(k)]
        merged = federated_aggregate(updates)
        ref_w = np.average(
            np.stack([u.weights for u, _ in updates]), axis=0, weights=[n for _, n in updates]
        )
        assert np.allclose(merged.weights, ref_w, atol=1e-12)


def test_aggregate_rejects_empty_and_bad_counts(rng):
    with pytest.raises(ProtocolError):
        federated_aggregate([])
    m = random_model(rng, 2, 2)
    with pytest.raises(ContractError):
        federated_aggregate([(m, 0)])
    with pytest.raises(ContractError):
        federated_aggregate([(m, 1), (random_model(rng, 3, 2), 1)])


# --- aggregate_gradients -----------------------------------------------------------


def test_aggregate_gradients_single_equals_sgd_step(rng):
    m = random_model(rng, 4, 3)
    g = gradient(m, random_batch(rng, 8, 4, 3))
    via_step = sgd_step(m, g, 0.03)
    via_agg = aggregate_gradients(m, [(g, 8)], 0.03)
    assert np.array_equal(via_step.weights, via_agg.weights)
    assert np.array_equal(via_step.biases, via_agg.biases)


def test_aggregate_gradients_equals_model_average(rng):
    # the two FedAvg formulations coincide (acceptance runs 200 instances)
    for _ in range(10):
        m = random_model(rng, 3, 3)
        grads = []
        for _ in range(4):
            g = gradient(m, random_batch(rng, int(rng.integers(2, 9)), 3, 3))
            grads.append((g, int(rng.integers(1, 200))))
        lr = float(rng.uniform(0.001, 0.5))
        via_grads = aggregate_gradients(m, grads, lr)
        stepped = [(sgd_step(m, g, lr), n) for g, n in grads]
        via_models = federated_aggregate(stepped)
        assert np.all(np.abs(via_grads.weights - via_models.weights) < 1e-12)
        assert np.all(np.abs(via_grads.biases - via_models.biases) < 1e-12)


# --- evaluate -----------------------------------------------------------------------


def test_evaluate_brute_force_oracle(rng):
    for _ in range(10):
        m = random_model(rng, 4, 3)
        batch = random_batch(rng, 25, 4, 3)
        probs = predict(m, batch.features)
        hits = 0
        for row, label in zip(probs, batch.labels):
            best, best_p = 0, row[0]
            for c in range(1, len(row)):
                if row[c] > best_p:
                    best, best_p = c, row[c]
            hits += int(best == label)
        assert evaluate(m, batch) == pytest.approx(hits / 25)


def test_evaluate_tie_breaks_to_lowest_class():
    m = ModelParams(weights=np.zeros((2, 3)), biases=np.zeros(3))
    batch = LabeledBatch(features=np.ones((4, 2)), labels=np.array([0, 0, 1, 2]))
    # all classes tie, argmax resolves to class 0
    assert evaluate(m, batch) == pytest.approx(0.5)


# --- feature extractor ----------------------------------------------------------------


def test_extractor_relu_and_shape():
    ex = make_extractor(12, 5, seed=4)
    rng = np.random.default_rng(0)
    out = extract_features(ex, rng.normal(size=(7, 12)))
    assert out.shape == (7, 5)
    assert np.all(out >= 0.0)


def test_extractor_deterministic_and_scaled():
    a = make_extractor(9, 4, seed=8)
    b = make_extractor(9, 4, seed=8)
    assert np.array_equal(a.projection, b.projection)
    # 1/sqrt(raw_dim) scaling keeps output variance near input variance
    assert a.projection.std() == pytest.approx(1 / math.sqrt(9), rel=0.2)


def test_extractor_linear_before_relu():
    ex = make_extractor(3, 2, seed=1)
    x = np.array([[1.0, -2.0, 0.5]])
    expected = np.maximum(x @ ex.projection, 0.0)
    assert np.array_equal(extract_features(ex, x), expected)


# --- serialization ----------------------------------------------------------------------


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.integers(2, 6))
def test_bytes_round_trip_bit_exact(seed, d, c):
    rng = np.random.default_rng(seed)
    m = random_model(rng, d, c)
    back = from_bytes(to_bytes(m))
    assert np.array_equal(back.weights, m.weights)
    assert np.array_equal(back.biases, m.biases)


def test_bytes_layout_is_header_then_row_major():
    m = ModelParams(
        weights=np.array([[1.0, 2.0], [3.0, 4.0]]), biases=np.array([5.0, 6.0])
    )
    raw = to_bytes(m)
    assert raw[:8] == (2).to_bytes(4, "little") + (2).to_bytes(4, "little")
    values = np.frombuffer(raw, dtype="<f8", offset=8)
    assert values.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]


def test_from_bytes_rejects_bad_payloads():
    with pytest.raises(ContractError):
        from_bytes(b"\x00\x01")
    m = ModelParams(weights=np.zeros((2, 2)), biases=np.zeros(2))
    with pytest.raises(ContractError):
        from_bytes(to_bytes(m)[:-3])
    with pytest.raises(ContractError):
        from_bytes(to_bytes(m) + b"\x00" * 8)
