import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgde.errors import ConfigurationError, NumericError, ShapeError
from sgde.nn import (AdamHyper, AdamState, Layer, NetworkArch, adam_step, backward_per_example,
                     forward, init_params, ordered_mean)

from conftest import rel_err


def _arch(widths, acts):
    return NetworkArch(tuple(Layer(widths[i], widths[i + 1], acts[i]) for i in range(len(acts))))


def _fd_rows(arch, params, x, c, h=1e-6):
    """Central differences of L_i = <out_i, c_i> for each example separately."""
    rows = np.empty((x.shape[0], params.size))
    for j in range(params.size):
        e = np.zeros_like(params)
        e[j] = h
        up = np.sum(forward(arch, params + e, x).output * c, axis=1)
        dn = np.sum(forward(arch, params - e, x).output * c, axis=1)
        rows[:, j] = (up - dn) / (2 * h)
    return rows


def test_init_is_deterministic_with_zero_biases():
    arch = NetworkArch.dense((2, 3))
    a, b = init_params(arch, 7), init_params(arch, 7)
    assert a.size == 9
    np.testing.assert_array_equal(a, b)
    _, bias = arch.unpack(a)[0]
    assert np.all(bias == 0.0)


def test_non_chaining_widths_rejected():
    with pytest.raises(ConfigurationError):
        NetworkArch((Layer(2, 3), Layer(4, 1)))


def test_affine_identity():
    arch = NetworkArch((Layer(1, 1, "linear"),))
    out = forward(arch, np.array([2.0, 1.0]), [[3.0]]).output
    assert out.tolist() == [[7.0]]


def test_sigmoid_of_zero_and_uniform_softmax():
    sig = NetworkArch((Layer(3, 2, "sigmoid"),))
    np.testing.assert_array_equal(forward(sig, np.zeros(8), np.ones((4, 3))).output, 0.5)
    soft = NetworkArch((Layer(2, 4, "softmax"),))
    np.testing.assert_allclose(forward(soft, np.zeros(12), np.ones((3, 2))).output, 0.25)


def test_forward_rejects_bad_input():
    arch = NetworkArch.dense((3, 2))
    p = init_params(arch, 0)
    with pytest.raises(ShapeError):
        forward(arch, p, np.ones((2, 4)))
    with pytest.raises(NumericError):
        forward(arch, p, np.array([[1.0, np.nan, 0.0]]))
    with pytest.raises(ShapeError):
        forward(arch, p[:-1], np.ones((2, 3)))


def test_three_layer_rows_match_finite_differences():
    rng = np.random.default_rng(3)
    arch = _arch((4, 6, 5, 3), ("leaky_relu", "swish", "sigmoid"))
    params = init_params(arch, 11) + rng.normal(0, 0.1, arch.param_count)
    x = rng.normal(size=(5, 4))
    c = rng.normal(size=(5, 3))
    analytic = backward_per_example(arch, params, x, c)
    numeric = _fd_rows(arch, params, x, c)
    for i in range(5):
        assert rel_err(analytic[i], numeric[i]) <= 1e-4


def test_softmax_logit_mode_matches_output_mode():
    rng = np.random.default_rng(5)
    arch = NetworkArch.dense((3, 4, 3), output="softmax")
    params = init_params(arch, 2)
    x = rng.normal(size=(6, 3))
    y = np.eye(3)[rng.integers(0, 3, 6)]
    probs = forward(arch, params, x).output
    via_logits = backward_per_example(arch, params, x, probs - y, wrt="logits")
    via_output = backward_per_example(arch, params, x, -y / probs)
    np.testing.assert_allclose(via_logits, via_output, rtol=1e-9, atol=1e-12)


act_st = st.sampled_from(["leaky_relu", "swish", "sigmoid", "linear", "softmax"])


@settings(max_examples=25, deadline=None)
@given(widths=st.lists(st.integers(1, 8), min_size=2, max_size=4),
       acts=st.lists(act_st, min_size=3, max_size=3), seed=st.integers(0, 2**16))
def test_finite_difference_agreement(widths, acts, seed):
    arch = _arch(widths, acts[:len(widths) - 1])
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed)
    x = rng.normal(size=(3, widths[0]))
    c = rng.normal(size=(3, widths[-1]))
    analytic = backward_per_example(arch, params, x, c)
    numeric = _fd_rows(arch, params, x, c)
    for i in range(3):
        assert rel_err(analytic[i], numeric[i]) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 9), seed=st.integers(0, 2**16))
def test_mean_of_rows_is_gradient_of_mean_loss(n, seed):
    rng = np.random.default_rng(seed)
    arch = _arch((3, 5, 2), ("swish", "sigmoid"))
    params = init_params(arch, seed)
    x = rng.normal(size=(n, 3))
    c = rng.normal(size=(n, 2))
    rows = backward_per_example(arch, params, x, c)
    # gradient of the mean loss: upstream scaled by 1/n, summed over the batch
    batch = backward_per_example(arch, params, x, c / n).sum(axis=0)
    np.testing.assert_allclose(rows.mean(axis=0), batch, rtol=0, atol=1e-12)


def test_ordered_mean_is_permutation_invariant():
    rows = np.random.default_rng(0).normal(size=(50, 7))
    perm = rows[np.random.default_rng(1).permutation(50)]
    np.testing.assert_array_equal(ordered_mean(rows), ordered_mean(perm))


def test_adam_fixed_point_and_first_step_size():
    p = np.array([0.3, -1.2, 4.0])
    out, state = adam_step(AdamState.fresh(3), p, np.zeros(3))
    np.testing.assert_array_equal(out, p)
    assert state.step_count == 1
    hyper = AdamHyper(learning_rate=0.01)
    out, _ = adam_step(AdamState.fresh(3, hyper), p, np.array([2.5, -0.4, 7.0]))
    np.testing.assert_allclose(np.abs(out - p), 0.01, rtol=1e-6)


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(42)
    p0 = rng.normal(size=4)
    grads = [rng.normal(size=4), rng.normal(size=4)]
    hyper = AdamHyper(learning_rate=0.003, beta1=0.85, beta2=0.99, eps_stability=1e-7)
    state, p = AdamState.fresh(4, hyper), p0.copy()
    for g in grads:
        p, state = adam_step(state, p, g)

    ref = []
    for j in range(4):
        x, m, v = float(p0[j]), 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            gj = float(g[j])
            m = 0.85 * m + 0.15 * gj
            v = 0.99 * v + 0.01 * gj * gj
            x -= 0.003 * (m / (1 - 0.85 ** t)) / (math.sqrt(v / (1 - 0.99 ** t)) + 1e-7)
        ref.append(x)
    np.testing.assert_allclose(p, ref, rtol=0, atol=1e-12)
    assert np.all(state.second_moment >= 0) and state.step_count == 2


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(NumericError):
        adam_step(AdamState.fresh(2), np.zeros(2), np.array([1.0, np.inf]))
