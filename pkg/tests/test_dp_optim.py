import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgde.accountant import calibrate_sigma, default_delta, make_certificate
from sgde.dp_optim import (DpTrainingConfig, clip_per_example, dp_train, noisy_aggregate,
                           rng_stream, sampling_rate, steps_per_epoch)
from sgde.errors import DataError, NumericError
from sgde.nn import AdamHyper, AdamState, NetworkArch, adam_step, backward_per_example, forward
from sgde.nn import init_params

ARCH = NetworkArch.dense((3, 4, 2), hidden="swish")


def squared_error(arch, params, batch, rng):
    # targets are a fixed function of the inputs
    target = np.stack([batch.sum(axis=1), batch[:, 0] - batch[:, 2]], axis=1)
    out = forward(arch, params, batch).output
    resid = out - target
    grads = backward_per_example(arch, params, batch, 2 * resid)
    return float(np.mean(np.sum(resid ** 2, axis=1))), grads


def test_clipping_rules():
    C = 1.5
    rows = np.array([[2 * C, 0.0], [0.3 * C, 0.4 * C], [0.0, 0.0]])
    out = clip_per_example(rows, C)
    assert np.linalg.norm(out[0]) == pytest.approx(C, rel=1e-15)
    np.testing.assert_array_equal(out[1], rows[1])
    np.testing.assert_array_equal(out[2], 0.0)
    np.testing.assert_array_equal(clip_per_example(rows, math.inf), rows)
    with pytest.raises(NumericError):
        clip_per_example(np.array([[np.nan, 1.0]]), C)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**16), C=st.floats(1e-3, 1e3), scale=st.floats(1e-3, 1e4))
def test_clipped_norm_bound(seed, C, scale):
    rows = np.random.default_rng(seed).normal(size=(6, 5)) * scale
    assert np.all(np.linalg.norm(clip_per_example(rows, C), axis=1) <= C + 1e-12)


def test_noiseless_aggregate_is_mean():
    rows = np.random.default_rng(0).normal(size=(7, 3))
    np.testing.assert_allclose(noisy_aggregate(rows, 0.0, 1.0, rng_stream(0, "noise")),
                               rows.mean(axis=0), rtol=0, atol=1e-15)


def test_aggregate_deterministic_per_stream():
    rows = np.ones((4, 5))
    a = noisy_aggregate(rows, 1.2, 1.0, rng_stream(9, "noise"))
    b = noisy_aggregate(rows, 1.2, 1.0, rng_stream(9, "noise"))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(rng_stream(9, "noise").normal(size=3),
                              rng_stream(9, "batches").normal(size=3))


def test_injected_noise_scale():
    rng = rng_stream(1, "noise")
    draws = np.array([noisy_aggregate(np.zeros((1, 1)), 2.0, 1.0, rng)[0] for _ in range(100_000)])
    assert abs(draws.std() - 2.0) <= 0.02


def test_disabled_mechanism_matches_plain_adam():
    rng = np.random.default_rng(4)
    data = rng.uniform(size=(12, 3))
    p0 = init_params(ARCH, 1)
    hyper = AdamHyper(learning_rate=0.01)
    cfg = DpTrainingConfig(clip_norm=math.inf, noise_multiplier=0.0, batch_size=12, epochs=15,
                           adam=hyper)
    got, log = dp_train(ARCH, p0, data, squared_error, cfg)
    assert log.mechanism is None and log.steps_taken == 15

    p, state = p0.copy(), AdamState.fresh(p0.size, hyper)
    for _ in range(15):
        _, g = squared_error(ARCH, p, data, None)
        p, state = adam_step(state, p, g.mean(axis=0))
    np.testing.assert_allclose(got, p, rtol=0, atol=1e-12)


def test_step_bookkeeping_and_certificate():
    data = np.random.default_rng(0).uniform(size=(50, 3))
    cfg = DpTrainingConfig(clip_norm=1.0, noise_multiplier=1.1, batch_size=16, epochs=3, seed=5)
    _, log = dp_train(ARCH, init_params(ARCH, 0), data, squared_error, cfg)
    assert steps_per_epoch(50, 16) == 4
    assert log.steps_taken == 3 * 4
    assert log.sampling_rate == sampling_rate(50, 16) == 16 / 50
    m = log.mechanism
    assert (m.noise_multiplier, m.sampling_rate, m.steps, m.clip_norm) == (1.1, 0.32, 12, 1.0)


def test_calibrated_run_stays_within_budget():
    n, L, epochs = 200, 20, 5
    delta = default_delta(n)
    q, T = sampling_rate(n, L), epochs * steps_per_epoch(n, L)
    sigma = calibrate_sigma(1.5, delta, q, T)
    data = np.random.default_rng(1).uniform(size=(n, 3))
    cfg = DpTrainingConfig(noise_multiplier=sigma, batch_size=L, epochs=epochs)
    _, log = dp_train(ARCH, init_params(ARCH, 0), data, squared_error, cfg)
    cert = make_certificate(log.mechanism, n)
    assert cert.epsilon <= 1.5


def test_reproducible_parameters():
    data = np.random.default_rng(2).uniform(size=(30, 3))
    cfg = DpTrainingConfig(noise_multiplier=0.8, batch_size=8, epochs=2, seed=3)
    a, _ = dp_train(ARCH, init_params(ARCH, 0), data, squared_error, cfg)
    b, _ = dp_train(ARCH, init_params(ARCH, 0), data, squared_error, cfg)
    assert a.tobytes() == b.tobytes()


def test_errors():
    cfg = DpTrainingConfig(noise_multiplier=1.0)
    with pytest.raises(DataError):
        dp_train(ARCH, init_params(ARCH, 0), np.empty((0, 3)), squared_error, cfg)

    def nan_loss(arch, params, batch, rng):
        return float("nan"), np.zeros((len(batch), params.size))

    with pytest.raises(NumericError, match="step 0"):
        dp_train(ARCH, init_params(ARCH, 0), np.ones((4, 3)), nan_loss, cfg)


def test_config_round_trip():
    cfg = DpTrainingConfig(clip_norm=0.5, noise_multiplier=None, batch_size=16, epochs=30,
                           adam=AdamHyper(learning_rate=0.01), seed=2)
    assert DpTrainingConfig.from_dict(cfg.to_dict()) == cfg
