import math

import numpy as np
import pytest

from collectivelstm.lstm_core import (
    GATES,
    LstmState,
    LstmWeights,
    TrainConfig,
    bptt_gradients,
    checkpoint_from_json,
    checkpoint_to_json,
    clip_gradients,
    forward_step,
    init_weights,
    mse_loss,
    sgd_momentum_update,
    train,
    zero_state,
    zero_velocity,
)
from collectivelstm.synth import SynthConfig, generate
from collectivelstm.timeseries import TimeSeries, apply_scaler, fit_scaler


def _random_weights(rng, hidden, horizons, scale=0.5):
    return init_weights(hidden, horizons, scale, rng)


def _zero_weights(hidden, horizons):
    return LstmWeights(
        W=np.zeros(4 * hidden),
        U=np.zeros((4 * hidden, hidden)),
        b=np.zeros(4 * hidden),
        V=np.zeros((horizons, hidden)),
        c=np.zeros(horizons),
    )


def _series(values):
    return TimeSeries(start_time=0, interval_seconds=600, values=values)


# --- LstmWeights ---


def test_weights_validate_shapes():
    with pytest.raises(ValueError, match="number of outputs"):
        _zero_weights(2, 4)
    weights = _zero_weights(2, 1)
    with pytest.raises(ValueError, match="parameter W"):
        LstmWeights(W=np.zeros(3), U=weights.U, b=weights.b, V=weights.V, c=weights.c)


def test_gate_views_follow_stacking_order():
    weights = _random_weights(np.random.default_rng(0), 3, 2)
    for k, name in enumerate(GATES):
        w, u, b = weights.gate(name)
        np.testing.assert_array_equal(w, weights.W[3 * k : 3 * (k + 1)])
        np.testing.assert_array_equal(u, weights.U[3 * k : 3 * (k + 1)])
        np.testing.assert_array_equal(b, weights.b[3 * k : 3 * (k + 1)])


def test_init_weights_within_scale():
    weights = init_weights(10, 3, 0.1, np.random.default_rng(1))
    assert all(np.max(np.abs(a)) <= 0.1 for a in weights.arrays().values())
    assert weights.hidden_size == 10
    assert weights.horizons == 3


# --- forward_step ---


def test_zero_weight_network_emits_one_half():
    weights = _zero_weights(3, 3)
    state = LstmState(h=np.array([0.2, -0.4, 0.9]), c=np.zeros(3))
    for x in (0.0, 0.37, 1.0, 0.5):
        state, y, _ = forward_step(weights, state, x)
        assert y.tolist() == [0.5, 0.5, 0.5]
        assert state.h.tolist() == [0.0, 0.0, 0.0]
        assert state.c.tolist() == [0.0, 0.0, 0.0]


def _scalar_sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_single_unit_matches_scalar_recurrence():
    # input, forget, output, candidate
    w = [0.3, -0.2, 0.5, 0.7]
    u = [0.1, 0.4, -0.3, 0.6]
    b = [0.05, 0.8, -0.1, 0.0]
    v, c_out = 1.2, -0.4
    weights = LstmWeights(
        W=np.array(w), U=np.array(u).reshape(4, 1), b=np.array(b), V=np.array([[v]]), c=np.array([c_out])
    )

    xs = np.random.default_rng(2).uniform(0, 1, 1000)
    state = zero_state(1)
    h, c = 0.0, 0.0
    for x in xs:
        state, y, _ = forward_step(weights, state, float(x))

        i = _scalar_sigmoid(w[0] * x + u[0] * h + b[0])
        f = _scalar_sigmoid(w[1] * x + u[1] * h + b[1])
        o = _scalar_sigmoid(w[2] * x + u[2] * h + b[2])
        g = math.tanh(w[3] * x + u[3] * h + b[3])
        c = f * c + i * g
        h = o * math.tanh(c)
        y_ref = _scalar_sigmoid(v * h + c_out)

        assert state.c[0] == pytest.approx(c, abs=1e-12)
        assert state.h[0] == pytest.approx(h, abs=1e-12)
        assert y[0] == pytest.approx(y_ref, abs=1e-12)


def test_outputs_stay_inside_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        hidden = int(rng.integers(1, 6))
        horizons = int(rng.integers(1, 4))
        weights = _random_weights(rng, hidden, horizons, scale=1.0)
        state = LstmState(h=rng.uniform(-1, 1, hidden), c=rng.uniform(-2, 2, hidden))
        _, y, _ = forward_step(weights, state, float(rng.uniform(0, 1)))
        assert np.all(y > 0.0) and np.all(y < 1.0)


def test_hidden_activations_stay_below_one():
    rng = np.random.default_rng(4)
    weights = _random_weights(rng, 5, 2, scale=1.0)
    state = zero_state(5)
    for x in rng.uniform(0, 1, 2000):
        state, _, _ = forward_step(weights, state, float(x))
        assert np.all(np.abs(state.h) < 1.0)


def test_forward_overflow_is_reported():
    weights = _zero_weights(1, 1)
    with pytest.raises(FloatingPointError, match="numeric overflow in forward pass"):
        forward_step(weights, LstmState(h=np.zeros(1), c=np.array([np.inf])), 0.0)


# --- mse_loss ---


def test_mse_loss_examples():
    assert mse_loss([0.3, 0.6], [0.3, 0.6]) == 0.0
    assert mse_loss([0.5], [0.0]) == 0.25
    assert mse_loss([0.2, 0.4], [0.0, 0.0]) == pytest.approx(0.10, abs=1e-15)


def test_mse_loss_length_mismatch():
    with pytest.raises(ValueError):
        mse_loss([0.1, 0.2], [0.1])


# --- bptt_gradients ---


def _summed_loss(weights, window, state):
    total = 0.0
    for x, target in window:
        state, y, _ = forward_step(weights, state, x)
        total += mse_loss(y, target)
    return total


def _nudged(weights, name, index, delta):
    arrays = {k: v.copy() for k, v in weights.arrays().items()}
    arrays[name][index] += delta
    return LstmWeights(**arrays)


def _max_gradient_error(weights, window, state, eps=1e-5):
    gradients, _, _ = bptt_gradients(weights, window, state)
    worst = 0.0
    for name, analytic in gradients.arrays().items():
        for index in np.ndindex(analytic.shape):
            plus = _summed_loss(_nudged(weights, name, index, eps), window, state)
            minus = _summed_loss(_nudged(weights, name, index, -eps), window, state)
            numeric = (plus - minus) / (2 * eps)
            a = analytic[index]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-4))
    return worst


def _random_window(rng, length, horizons):
    return [(float(rng.uniform(0, 1)), rng.uniform(0, 1, horizons)) for _ in range(length)]


def test_gradients_match_finite_differences_small_network():
    rng = np.random.default_rng(5)
    weights = _random_weights(rng, 3, 2)
    state = LstmState(h=rng.uniform(-0.5, 0.5, 3), c=rng.uniform(-0.5, 0.5, 3))
    assert _max_gradient_error(weights, _random_window(rng, 5, 2), state) < 1e-4


def test_gradients_match_finite_differences_random_configurations():
    rng = np.random.default_rng(6)
    for _ in range(100):
        hidden = int(rng.integers(1, 5))
        horizons = int(rng.integers(1, 4))
        length = int(rng.integers(1, 7))
        weights = _random_weights(rng, hidden, horizons)
        state = LstmState(h=rng.uniform(-0.5, 0.5, hidden), c=rng.uniform(-0.5, 0.5, hidden))
        window = _random_window(rng, length, horizons)
        assert _max_gradient_error(weights, window, state) < 1e-4


def test_zero_error_window_has_zero_gradients():
    rng = np.random.default_rng(7)
    weights = _random_weights(rng, 4, 3)
    xs = rng.uniform(0, 1, 6)
    state = zero_state(4)
    window = []
    for x in xs:
        state, y, _ = forward_step(weights, state, float(x))
        window.append((float(x), y.copy()))

    gradients, _, loss = bptt_gradients(weights, window, zero_state(4))
    assert loss == 0.0
    assert all(not np.any(a) for a in gradients.arrays().values())


def test_output_bias_gradient_of_zero_network():
    gradients, _, loss = bptt_gradients(_zero_weights(1, 1), [(0.0, np.array([0.0]))], zero_state(1))
    assert gradients.c.tolist() == [0.25]
    assert loss == 0.25


def test_final_state_matches_forward_pass():
    rng = np.random.default_rng(8)
    weights = _random_weights(rng, 3, 1)
    window = _random_window(rng, 4, 1)
    state = zero_state(3)
    for x, _ in window:
        state, _, _ = forward_step(weights, state, x)
    _, final_state, _ = bptt_gradients(weights, window, zero_state(3))
    np.testing.assert_array_equal(final_state.h, state.h)
    np.testing.assert_array_equal(final_state.c, state.c)


def test_empty_window_is_rejected():
    with pytest.raises(ValueError):
        bptt_gradients(_zero_weights(1, 1), [], zero_state(1))


# --- clipping and updates ---


def test_clip_gradients_only_when_needed():
    weights = _random_weights(np.random.default_rng(9), 2, 1)
    unchanged, clipped = clip_gradients(weights, 5.0)
    assert unchanged is weights
    assert clipped is False

    arrays = {k: v.copy() for k, v in weights.arrays().items()}
    arrays["U"][0, 0] = 12.0
    arrays["c"][0] = -7.5
    result, clipped = clip_gradients(LstmWeights(**arrays), 5.0)
    assert clipped is True
    assert result.U[0, 0] == 5.0
    assert result.c[0] == -5.0
    np.testing.assert_array_equal(result.W, weights.W)


def test_plain_gradient_step():
    rng = np.random.default_rng(10)
    weights = _random_weights(rng, 2, 2)
    gradients = _random_weights(rng, 2, 2)
    updated, _ = sgd_momentum_update(weights, zero_velocity(weights), gradients, learning_rate=1.0, momentum=0.0)
    for name, value in updated.arrays().items():
        np.testing.assert_array_equal(value, getattr(weights, name) - getattr(gradients, name))


def test_zero_gradient_halves_velocity():
    rng = np.random.default_rng(11)
    weights = _random_weights(rng, 2, 1)
    velocity = _random_weights(rng, 2, 1)
    updated, new_velocity = sgd_momentum_update(
        weights, velocity, weights.zeros_like(), learning_rate=1e-4, momentum=0.5
    )
    for name in velocity.arrays():
        np.testing.assert_array_equal(getattr(new_velocity, name), getattr(velocity, name) / 2)
        np.testing.assert_array_equal(getattr(updated, name), getattr(weights, name) + getattr(velocity, name) / 2)


def test_momentum_accumulates_geometrically():
    rng = np.random.default_rng(12)
    weights = _random_weights(rng, 3, 1)
    gradients = _random_weights(rng, 3, 1)
    lr = 0.01
    step1, velocity = sgd_momentum_update(weights, zero_velocity(weights), gradients, lr, 0.5)
    step2, _ = sgd_momentum_update(step1, velocity, gradients, lr, 0.5)
    for name, value in step2.arrays().items():
        expected = getattr(weights, name) - lr * getattr(gradients, name) * 2.5
        np.testing.assert_allclose(value, expected, rtol=0, atol=1e-15)


# --- TrainConfig / train ---


@pytest.mark.parametrize(
    "overrides",
    [
        {"learning_rate": 0.0},
        {"momentum": 1.0},
        {"epochs": 0},
        {"bptt_window": 0},
        {"horizons": 4},
        {"batch_size": 2},
        {"hidden_size": 0},
    ],
)
def test_train_config_rejects_invalid_values(overrides):
    with pytest.raises(ValueError):
        TrainConfig(**overrides)


def test_train_config_defaults():
    config = TrainConfig()
    assert (config.hidden_size, config.learning_rate, config.epochs, config.momentum) == (10, 1e-4, 100, 0.5)
    assert (config.batch_size, config.bptt_window, config.init_scale) == (1, 16, 0.1)


def test_constant_series_loss_decreases():
    result = train(_series(np.full(160, 0.5)), TrainConfig(epochs=20, seed=3), quiet=True)
    curve = result.loss_curve
    assert len(curve) == 20
    assert all(b <= a + 1e-15 for a, b in zip(curve, curve[1:]))
    assert curve[-1] < curve[0]


def test_training_is_deterministic():
    values = np.random.default_rng(13).uniform(0, 1, 120)
    config = TrainConfig(hidden_size=4, horizons=2, epochs=3, seed=21)
    first = train(_series(values), config, quiet=True)
    second = train(_series(values), config, quiet=True)
    assert first.loss_curve == second.loss_curve
    for name, value in first.weights.arrays().items():
        np.testing.assert_array_equal(value, getattr(second.weights, name))


def test_validation_curve_tracks_epochs():
    rng = np.random.default_rng(14)
    result = train(
        _series(rng.uniform(0, 1, 80)),
        TrainConfig(hidden_size=3, epochs=4),
        valid_series=_series(rng.uniform(0, 1, 40)),
        quiet=True,
    )
    assert len(result.loss_curve) == 4
    assert len(result.valid_loss_curve) == 4


def test_short_validation_series_is_skipped(capsys):
    rng = np.random.default_rng(16)
    result = train(
        _series(rng.uniform(0, 1, 40)),
        TrainConfig(hidden_size=2, horizons=3, epochs=2),
        valid_series=_series([0.2, 0.4, 0.6]),
    )
    assert len(result.loss_curve) == 2
    assert result.valid_loss_curve == []
    assert "skipping validation loss" in capsys.readouterr().err


def test_train_rejects_short_series():
    with pytest.raises(ValueError, match="too short"):
        train(_series([0.1, 0.2, 0.3]), TrainConfig(horizons=2, epochs=1), quiet=True)


def test_train_reports_progress(capsys):
    train(_series(np.linspace(0, 1, 40)), TrainConfig(hidden_size=2, epochs=2))
    assert "epoch" in capsys.readouterr().err


# --- checkpoints ---


def test_checkpoint_restores_exact_weights():
    config = TrainConfig(hidden_size=3, horizons=3, epochs=2, seed=8)
    result = train(_series(np.random.default_rng(15).uniform(0, 1, 60)), config, quiet=True)
    weights, restored_config = checkpoint_from_json(checkpoint_to_json(result.weights, config))
    assert restored_config == config
    for name, value in result.weights.arrays().items():
        np.testing.assert_array_equal(value, getattr(weights, name))


def test_checkpoint_is_self_describing():
    import json

    document = json.loads(checkpoint_to_json(_zero_weights(2, 3), TrainConfig(hidden_size=2, horizons=3, seed=4)))
    assert document["hidden_size"] == 2
    assert document["horizons"] == 3
    assert document["seed"] == 4
    assert set(document["params"]) >= {"W_input", "U_forget", "b_output", "W_candidate", "V", "c"}


def test_checkpoint_rejects_foreign_documents():
    with pytest.raises(ValueError, match="not a collectivelstm checkpoint"):
        checkpoint_from_json('{"format": "other"}')


# --- synthetic training sanity ---


@pytest.mark.slow
@pytest.mark.parametrize("horizons", [1, 2, 3])
def test_training_loss_falls_on_synthetic_normal_traffic(horizons):
    raw = generate(SynthConfig(length=432, mean=100, amplitude=20, period=144, noise_sigma=0.85, seed=7)).series
    series = apply_scaler(fit_scaler(raw), raw)
    result = train(series, TrainConfig(horizons=horizons, seed=1), quiet=True)
    assert len(result.loss_curve) == 100
    assert result.loss_curve[-1] < result.loss_curve[0]
