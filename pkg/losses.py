"""Imitation loss, softplus barrier and the combined safe loss."""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from policy_net import FeatureVector
from splines import DEFAULT_KNOTS, KnotVector, greville_times

DEFAULT_K = 1000.0
DEFAULT_TRACK = 1.8


@dataclass(frozen=True)
class BarrierConfig:
    """Barrier weight, vehicle track and the spline timing it evaluates."""

    K: float = DEFAULT_K
    T: float = DEFAULT_TRACK
    horizon_s: float = 20.0
    kv: KnotVector = field(default=DEFAULT_KNOTS)
    lane_width: float = 3.5

    def __post_init__(self):
        # K = 0 turns the barrier off
        if self.K < 0:
            raise ValueError(f"K must be non-negative, got {self.K}")
        if not (0.0 < self.T < self.lane_width):
            raise ValueError(f"track T={self.T} must lie in (0, lane width {self.lane_width})")
        if self.horizon_s <= 0:
            raise ValueError("horizon_s must be positive")

    def control_times(self) -> np.ndarray:
        """Times of the free control points (origin dropped)."""
        return greville_times(self.kv, self.horizon_s)[1:]

    def as_dict(self) -> dict:
        return {"K": self.K, "T": self.T, "horizon_s": self.horizon_s,
                "knots": list(self.kv.knots), "degree": self.kv.degree,
                "lane_width": self.lane_width}

    @classmethod
    def from_dict(cls, data: dict) -> "BarrierConfig":
        kv = KnotVector(tuple(data["knots"]), int(data["degree"]))
        return cls(K=float(data["K"]), T=float(data["T"]), horizon_s=float(data["horizon_s"]),
                   kv=kv, lane_width=float(data["lane_width"]))


def softplus(z):
    """ln(1 + e^z) without overflow."""
    return np.logaddexp(0.0, z)


def _features_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureVector):
        return features.as_array()[None, :]
    return np.atleast_2d(np.asarray(features, dtype=float))


def imitation_loss(a, a_star) -> Tuple[float, np.ndarray]:
    """Squared Euclidean coefficient error and its gradient 2(a - a*)."""
    diff = np.asarray(a, dtype=float) - np.asarray(a_star, dtype=float)
    return float(np.sum(diff * diff)), 2.0 * diff


def lane_bound_margins(features, a, track: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Arguments of the left and right lane terms for every free control point.

    Non-positive values mean the point sits inside the lane shrunk by half
    the vehicle track.

    Returns:
        (left, right), each of shape (B, 3)
    """
    f = _features_matrix(features)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    ax, ay = a[:, 0::2], a[:, 1::2]
    left_bound = f[:, [0]] + f[:, [1]] * ax + f[:, [2]] * ax ** 2 - track / 2.0
    right_bound = f[:, [3]] + f[:, [4]] * ax + f[:, [5]] * ax ** 2 + track / 2.0
    return ay - left_bound, right_bound - ay


def barrier_batch(features, a, cfg: BarrierConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample barrier values (B,) and their gradients w.r.t. the coefficients (B, 6)."""
    f = _features_matrix(features)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    ax = a[:, 0::2]
    z_left, z_right = lane_bound_margins(f, a, cfg.T)
    d_lead = f[:, [8]] + f[:, [7]] * cfg.control_times()[None, :]
    z_lead = ax - d_lead

    value = cfg.K * (softplus(z_left) + softplus(z_right) + softplus(z_lead)).sum(axis=1)

    s_left, s_right, s_lead = expit(z_left), expit(z_right), expit(z_lead)
    left_slope = f[:, [1]] + 2.0 * f[:, [2]] * ax
    right_slope = f[:, [4]] + 2.0 * f[:, [5]] * ax
    grad = np.empty_like(a)
    grad[:, 0::2] = cfg.K * (-s_left * left_slope + s_right * right_slope + s_lead)
    grad[:, 1::2] = cfg.K * (s_left - s_right)
    return value, grad


def barrier(f, a, cfg: BarrierConfig) -> Tuple[float, np.ndarray]:
    """Barrier value and its gradient w.r.t. the coefficients for one sample."""
    value, grad = barrier_batch(f, a, cfg)
    return float(value[0]), grad[0]


def safe_loss(f, a, a_star, cfg: Optional[BarrierConfig]) -> Tuple[float, np.ndarray]:
    """
    Imitation loss plus barrier; with ``cfg=None`` this is plain behavioral cloning.

    Args:
        f: Features
        a: Predicted coefficients
        a_star: Expert coefficients
        cfg: Barrier configuration, or None for BC mode

    Returns:
        (loss, gradient w.r.t. a)
    """
    loss, grad = imitation_loss(a, a_star)
    if cfg is None:
        return loss, grad
    b_value, b_grad = barrier(f, a, cfg)
    return loss + b_value, grad + b_grad
