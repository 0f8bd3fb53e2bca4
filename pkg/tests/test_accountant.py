import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from sgde.accountant import (DEFAULT_ORDERS, MechanismParams, PrivacyCertificate, RdpCurve,
                             calibrate_sigma, compose, default_delta, epsilon_for,
                             make_certificate, rdp_curve, rdp_subsampled_gaussian,
                             recompute_epsilon, to_epsilon_delta)
from sgde.errors import CalibrationError, DomainError, PolicyError

SIGMAS = (0.5, 1.0, 2.0, 5.0)
RATES = (0.001, 0.01, 0.05, 0.2)


def oracle_rdp(sigma, q, alpha, dps=60):
    """Plain binomial sum evaluated in arbitrary precision."""
    with mpmath.workdps(dps):
        q, s2 = mpmath.mpf(q), mpmath.mpf(sigma) ** 2
        total = mpmath.fsum(
            mpmath.binomial(alpha, k) * q ** k * (1 - q) ** (alpha - k)
            * mpmath.exp(mpmath.mpf(k * (k - 1)) / (2 * s2))
            for k in range(alpha + 1)
        )
        return float(mpmath.log(total) / (alpha - 1))


def test_full_sampling_is_plain_gaussian():
    for sigma in SIGMAS:
        for alpha in DEFAULT_ORDERS:
            assert abs(rdp_subsampled_gaussian(sigma, 1.0, alpha) - alpha / (2 * sigma ** 2)) <= 1e-12
    assert rdp_subsampled_gaussian(1.0, 1.0, 2) == 1.0


def test_zero_sampling_costs_nothing():
    assert all(rdp_subsampled_gaussian(s, 0.0, a) == 0.0 for s in SIGMAS for a in (2, 17, 64))


def test_small_rate_value_at_order_two():
    # closed form at order 2: log(1 + q^2 (e^{1/sigma^2} - 1))
    expected = math.log1p(0.01 ** 2 * math.expm1(1.0))
    assert rdp_subsampled_gaussian(1.0, 0.01, 2) == pytest.approx(expected, rel=1e-12)
    assert rdp_subsampled_gaussian(1.0, 0.01, 2) == pytest.approx(1.71813422e-4, rel=1e-8)


@pytest.mark.parametrize("sigma", SIGMAS)
@pytest.mark.parametrize("q", RATES)
def test_matches_arbitrary_precision_sum(sigma, q):
    for alpha in DEFAULT_ORDERS:
        ref = oracle_rdp(sigma, q, alpha)
        got = rdp_subsampled_gaussian(sigma, q, alpha)
        assert abs(got - ref) <= 1e-8 * abs(ref), (alpha, got, ref)


def test_domain_errors():
    with pytest.raises(DomainError):
        rdp_subsampled_gaussian(0.0, 0.1, 2)
    with pytest.raises(DomainError):
        rdp_subsampled_gaussian(1.0, 0.1, 1)
    with pytest.raises(DomainError):
        to_epsilon_delta(RdpCurve({2: 1.0}), 0.0)
    with pytest.raises(DomainError):
        RdpCurve({})


def test_composition_is_additive():
    per_step = rdp_curve(1.3, 0.02)
    assert all(v == 0.0 for v in compose(per_step, 0).points.values())
    assert compose(per_step, 1) == per_step
    ten = compose(per_step, 10)
    for a in per_step.orders:
        assert ten.points[a] == pytest.approx(10 * per_step.points[a], rel=1e-15)


def test_conversion_anchors():
    zero = RdpCurve({a: 0.0 for a in DEFAULT_ORDERS})
    eps, order = to_epsilon_delta(zero, 1e-5)
    assert order == 64
    assert eps == pytest.approx(math.log(1e5) / 63, rel=1e-12)
    assert round(eps, 5) == 0.18274
    eps, order = to_epsilon_delta(RdpCurve({2: 1.0}), 1e-5)
    assert order == 2 and eps == pytest.approx(1 + math.log(1e5), rel=1e-12)
    assert round(eps, 4) == 12.5129


def test_monotonicity_grid():
    delta = 1e-5
    for q in RATES:
        for steps in (10, 200, 2000):
            values = [epsilon_for(s, q, steps, delta)[0] for s in (0.6, 0.9, 1.3, 2.0, 4.0)]
            assert all(a >= b for a, b in zip(values, values[1:]))
    for sigma in (0.7, 1.5, 3.0):
        for steps in (10, 500):
            values = [epsilon_for(sigma, q, steps, delta)[0] for q in RATES]
            assert all(a <= b for a, b in zip(values, values[1:]))
        for q in RATES:
            values = [epsilon_for(sigma, q, t, delta)[0] for t in (1, 10, 100, 1000)]
            assert all(a <= b for a, b in zip(values, values[1:]))


def test_calibration_brackets_target():
    sigma = calibrate_sigma(1.5, 1e-5, 0.05, 2000)
    assert epsilon_for(sigma, 0.05, 2000, 1e-5)[0] <= 1.5
    assert epsilon_for(sigma / 1.01, 0.05, 2000, 1e-5)[0] > 1.5


def test_calibration_edges():
    assert calibrate_sigma(1.5, 1e-5, 0.0, 100) == 0.1
    assert calibrate_sigma(1.5, 1e-5, 0.05, 4000) >= calibrate_sigma(1.5, 1e-5, 0.05, 2000)
    with pytest.raises(CalibrationError):
        calibrate_sigma(1e-3, 1e-5, 1.0, 10 ** 6)


def test_delta_policy():
    mech = MechanismParams(1.1, 0.05, 100)
    assert make_certificate(mech, 50).delta == 1e-5
    assert make_certificate(mech, 10 ** 7).delta == pytest.approx(1e-8, rel=1e-15)
    assert default_delta(200) == min(1e-5, 1 / 2000)
    with pytest.raises(PolicyError):
        make_certificate(mech, 50, delta_policy=0.01)


@settings(max_examples=30, deadline=None)
@given(sigma=st.floats(0.5, 20), q=st.floats(0.0, 1.0), steps=st.integers(0, 5000),
       n=st.integers(1, 10 ** 6))
def test_certificate_recomputes_and_round_trips(sigma, q, steps, n):
    cert = make_certificate(MechanismParams(sigma, q, steps), n)
    assert cert.delta <= min(1e-5, 1 / (10 * n))
    assert abs(recompute_epsilon(cert)[0] - cert.epsilon) <= 1e-9
    assert PrivacyCertificate.from_dict(cert.to_dict()) == cert
    assert set(cert.to_dict()) == {"noise_multiplier", "sampling_rate", "steps", "clip_norm",
                                   "delta", "epsilon", "optimal_order", "rdp", "class_size"}
