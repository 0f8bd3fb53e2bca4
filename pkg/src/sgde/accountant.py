"""Renyi-DP accounting for the subsampled Gaussian mechanism.

Only integer orders are supported, which keeps the binomial expansion of the
sampled-Gaussian moment exact. Curves are composed additively over training
steps and converted to an (epsilon, delta) guarantee with the standard
``rdp + log(1/delta) / (alpha - 1)`` bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import CalibrationError, DomainError, PolicyError

DEFAULT_ORDERS = tuple(range(2, 65))
DEFAULT_DELTA = 1e-5
SIGMA_BOUNDS = (1e-1, 1e3)


@dataclass(frozen=True)
class MechanismParams:
    noise_multiplier: float
    sampling_rate: float
    steps: int
    clip_norm: float = 1.0

    def __post_init__(self):
        if not self.noise_multiplier > 0:
            raise DomainError("noise multiplier must be positive")
        if not 0.0 <= self.sampling_rate <= 1.0:
            raise DomainError("sampling rate must lie in [0, 1]")
        if self.steps < 0:
            raise DomainError("steps must be non-negative")
        if not self.clip_norm > 0:
            raise DomainError("clip norm must be positive")


@dataclass(frozen=True)
class RdpCurve:
    """Mapping from integer Renyi order to its RDP epsilon."""

    points: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        pts = {int(a): float(v) for a, v in sorted(dict(self.points).items())}
        if not pts:
            raise DomainError("RDP curve must be non-empty")
        for a, v in pts.items():
            if a < 2:
                raise DomainError(f"RDP order {a} < 2")
            if not v >= 0:
                raise DomainError(f"negative or NaN RDP value at order {a}")
        object.__setattr__(self, "points", pts)

    @property
    def orders(self) -> list[int]:
        return list(self.points)

    def to_list(self) -> list[list]:
        return [[a, v] for a, v in self.points.items()]

    @classmethod
    def from_list(cls, items) -> "RdpCurve":
        return cls({int(a): float(v) for a, v in items})


def _log_comb(n: int, k: int) -> float:
    return math.log(math.comb(n, k))


def rdp_subsampled_gaussian(sigma: float, q: float, alpha: int) -> float:
    """RDP at integer order ``alpha`` of one sampled-Gaussian step."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if not 0.0 <= q <= 1.0:
        raise DomainError("sampling rate must lie in [0, 1]")
    if int(alpha) != alpha or alpha < 2:
        raise DomainError("order must be an integer >= 2")
    alpha = int(alpha)
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return alpha / (2.0 * sigma ** 2)
    log_q, log_1mq = math.log(q), math.log1p(-q)
    k = np.arange(alpha + 1)
    log_terms = (
        np.array([_log_comb(alpha, i) for i in range(alpha + 1)])
        + k * log_q
        + (alpha - k) * log_1mq
        + k * (k - 1) / (2.0 * sigma ** 2)
    )
    log_a = float(np.logaddexp.reduce(log_terms))
    # the exact moment is >= 1; rounding can push the log a hair below zero
    return max(log_a, 0.0) / (alpha - 1)


def rdp_curve(sigma: float, q: float, orders=DEFAULT_ORDERS) -> RdpCurve:
    return RdpCurve({a: rdp_subsampled_gaussian(sigma, q, a) for a in orders})


def compose(curve_per_step: RdpCurve, steps: int) -> RdpCurve:
    if steps < 0:
        raise DomainError("steps must be non-negative")
    return RdpCurve({a: v * steps for a, v in curve_per_step.points.items()})


def to_epsilon_delta(curve: RdpCurve, delta: float) -> tuple[float, int]:
    """Smallest epsilon over the curve's orders, with the order achieving it."""
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    log_inv_delta = math.log(1.0 / delta)
    best_eps, best_order = math.inf, None
    for a, v in curve.points.items():
        eps = v + log_inv_delta / (a - 1)
        if eps < best_eps:  # strict: ties keep the smaller order
            best_eps, best_order = eps, a
    return best_eps, best_order


def epsilon_for(sigma: float, q: float, steps: int, delta: float,
                orders=DEFAULT_ORDERS) -> tuple[float, int]:
    return to_epsilon_delta(compose(rdp_curve(sigma, q, orders), steps), delta)


def calibrate_sigma(target_epsilon: float, delta: float, q: float, steps: int,
                    rel_tol: float = 1e-3, bounds=SIGMA_BOUNDS,
                    orders=DEFAULT_ORDERS) -> float:
    """Smallest noise multiplier (to ``rel_tol``) whose epsilon meets the target.

    Bisection is valid because epsilon is non-increasing in sigma.
    """
    if not target_epsilon > 0:
        raise DomainError("target epsilon must be positive")
    lo, hi = bounds

    def eps(s):
        return epsilon_for(s, q, steps, delta, orders)[0]

    if eps(lo) <= target_epsilon:
        return lo
    if eps(hi) > target_epsilon:
        raise CalibrationError(
            f"epsilon {target_epsilon} unreachable with sigma <= {hi} "
            f"(q={q}, steps={steps}, delta={delta})"
        )
    # invariant: eps(lo) > target >= eps(hi)
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if eps(mid) <= target_epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def delta_cap(class_size: int) -> float:
    return 1.0 / (10.0 * class_size)


def default_delta(class_size: int) -> float:
    return min(DEFAULT_DELTA, delta_cap(class_size))


@dataclass(frozen=True)
class PrivacyCertificate:
    mechanism: MechanismParams
    rdp: RdpCurve
    delta: float
    epsilon: float
    optimal_order: int
    dataset_class_size: int

    def to_dict(self) -> dict:
        m = self.mechanism
        return {
            "noise_multiplier": m.noise_multiplier,
            "sampling_rate": m.sampling_rate,
            "steps": m.steps,
            "clip_norm": m.clip_norm,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "optimal_order": self.optimal_order,
            "rdp": self.rdp.to_list(),
            "class_size": self.dataset_class_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrivacyCertificate":
        mech = MechanismParams(
            float(d["noise_multiplier"]), float(d["sampling_rate"]),
            int(d["steps"]), float(d["clip_norm"]),
        )
        return cls(mech, RdpCurve.from_list(d["rdp"]), float(d["delta"]),
                   float(d["epsilon"]), int(d["optimal_order"]), int(d["class_size"]))


def make_certificate(mechanism: MechanismParams, class_size: int,
                     delta_policy: float | None = None,
                     orders=DEFAULT_ORDERS) -> PrivacyCertificate:
    if class_size < 1:
        raise DomainError("class size must be >= 1")
    delta = default_delta(class_size)
    if delta_policy is not None:
        if delta_policy > delta_cap(class_size):
            raise PolicyError(
                f"delta {delta_policy} looser than 1/(10*class_size) = {delta_cap(class_size)}"
            )
        delta = min(delta, delta_policy)
    curve = compose(
        rdp_curve(mechanism.noise_multiplier, mechanism.sampling_rate, orders),
        mechanism.steps,
    )
    eps, order = to_epsilon_delta(curve, delta)
    return PrivacyCertificate(mechanism, curve, delta, eps, order, class_size)


def recompute_epsilon(cert: PrivacyCertificate) -> tuple[float, RdpCurve]:
    """Epsilon and curve re-derived from the certificate's mechanism alone."""
    m = cert.mechanism
    curve = compose(rdp_curve(m.noise_multiplier, m.sampling_rate, cert.rdp.orders), m.steps)
    return to_epsilon_delta(curve, cert.delta)[0], curve
