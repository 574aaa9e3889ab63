"""Shallow planning policy: driving features in, spline coefficients out."""
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from utils.fileio import atomic_output

N_FEATURES = 9
N_HIDDEN = 64
N_OUTPUTS = 6
CHECKPOINT_VERSION = 2

# smallest spread each input is normalized by: lane offsets, slopes, curvatures, speeds, gap
FEATURE_SCALE_FLOOR = np.array([0.01, 1e-4, 1e-6, 0.01, 1e-4, 1e-6, 0.1, 0.1, 0.5])
OUTPUT_SCALE_FLOOR = 0.5

FEATURE_NAMES = ("c0l", "c1l", "c2l", "c0r", "c1r", "c2r", "vx", "vlead", "dlead")
COEFF_NAMES = ("ax1", "ay1", "ax2", "ay2", "ax3", "ay3")
PARAM_NAMES = ("w1", "b1", "w2", "b2")

Gradients = Dict[str, np.ndarray]


@dataclass(frozen=True)
class FeatureVector:
    """Network input: quadratic lane fits, ego speed and lead state."""

    c0l: float
    c1l: float
    c2l: float
    c0r: float
    c1r: float
    c2r: float
    v_x: float
    v_lead: float
    d_lead: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} feature values, got {values.shape}")
        return cls(*(float(v) for v in values))

    def validate(self) -> "FeatureVector":
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("features must be finite")
        if self.d_lead <= 0:
            raise ValueError(f"d_lead must be positive, got {self.d_lead}")
        if self.v_x < 0:
            raise ValueError(f"v_x must be non-negative, got {self.v_x}")
        if self.c0l <= self.c0r:
            raise ValueError("left lane offset c0l must exceed right lane offset c0r")
        return self


@dataclass(frozen=True, eq=False)
class PolicyNetwork:
    """
    9 -> 64 (tanh) -> 6 (linear) with input normalization and output de-standardization.

    The linear layer predicts standardized coefficients; ``output_scale`` and
    ``output_mean`` map them back to meters.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    output_scale: np.ndarray
    output_mean: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.output_mean is None:
            object.__setattr__(self, "output_mean", np.zeros(N_OUTPUTS))
        n_hidden = self.w1.shape[0]
        expected = {
            "w1": (n_hidden, N_FEATURES),
            "b1": (n_hidden,),
            "w2": (N_OUTPUTS, n_hidden),
            "b2": (N_OUTPUTS,),
            "feature_mean": (N_FEATURES,),
            "feature_scale": (N_FEATURES,),
            "output_scale": (N_OUTPUTS,),
            "output_mean": (N_OUTPUTS,),
        }
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != shape:
                raise ValueError(f"{name} has shape {value.shape}, expected {shape}")
            object.__setattr__(self, name, value)
        if np.any(self.feature_scale <= 0) or np.any(self.output_scale <= 0):
            raise ValueError("normalization scales must be strictly positive")

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, params: Dict[str, np.ndarray]) -> "PolicyNetwork":
        return replace(self, **params)


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureVector):
        return features.as_array()[None, :]
    return np.atleast_2d(np.asarray(features, dtype=float))


def _fit_stats(values: Optional[np.ndarray], width: int, floor) -> Tuple[np.ndarray, np.ndarray]:
    """Column mean and std, std floored; identity without data."""
    if values is None or len(values) == 0:
        return np.zeros(width), np.ones(width)
    values = np.asarray(values, dtype=float)
    return values.mean(axis=0), np.maximum(values.std(axis=0), floor)


def init(seed: int, features: Optional[np.ndarray] = None, targets: Optional[np.ndarray] = None,
         n_hidden: int = N_HIDDEN) -> PolicyNetwork:
    """
    Seeded network initialization.

    Weights are uniform in +-1/sqrt(fan_in), biases zero. Input normalization
    comes from the training features (mean, std with a per-feature floor);
    the outputs are de-standardized with the mean and std of the training
    targets, so an untrained network predicts the average plan. Without data
    both maps are the identity and zero weights give a zero plan.

    Args:
        seed: Integer seed
        features: Training features, shape (N, 9)
        targets: Training targets, shape (N, 6)
        n_hidden: Hidden width

    Returns:
        PolicyNetwork
    """
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / np.sqrt(N_FEATURES)
    bound2 = 1.0 / np.sqrt(n_hidden)
    w1 = rng.uniform(-bound1, bound1, size=(n_hidden, N_FEATURES))
    w2 = rng.uniform(-bound2, bound2, size=(N_OUTPUTS, n_hidden))
    feature_mean, feature_scale = _fit_stats(features, N_FEATURES, FEATURE_SCALE_FLOOR)
    output_mean, output_scale = _fit_stats(targets, N_OUTPUTS, OUTPUT_SCALE_FLOOR)
    return PolicyNetwork(
        w1=w1,
        b1=np.zeros(n_hidden),
        w2=w2,
        b2=np.zeros(N_OUTPUTS),
        feature_mean=feature_mean,
        feature_scale=feature_scale,
        output_scale=output_scale,
        output_mean=output_mean,
    )


def normalize(net: PolicyNetwork, features) -> np.ndarray:
    return (_as_matrix(features) - net.feature_mean) / net.feature_scale


def forward_batch(net: PolicyNetwork, features) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Batched forward pass; returns outputs (B, 6) and the backward cache."""
    x = _as_matrix(features)
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    z = (x - net.feature_mean) / net.feature_scale
    hidden = np.tanh(z @ net.w1.T + net.b1)
    out = (hidden @ net.w2.T + net.b2) * net.output_scale + net.output_mean
    return out, {"z": z, "hidden": hidden}


def forward(net: PolicyNetwork, f) -> np.ndarray:
    """Coefficient vector (ax1, ay1, ax2, ay2, ax3, ay3) for one feature vector."""
    out, _ = forward_batch(net, f)
    return out[0]


def backward_batch(net: PolicyNetwork, cache: Dict[str, np.ndarray], dl_da: np.ndarray) -> Gradients:
    """Parameter gradients summed over the batch, plus the raw-input gradient ``x``."""
    dl_da = np.atleast_2d(np.asarray(dl_da, dtype=float))
    if not np.all(np.isfinite(dl_da)):
        raise ValueError("output gradient must be finite")
    d_out = dl_da * net.output_scale
    hidden = cache["hidden"]
    d_hidden = (d_out @ net.w2) * (1.0 - hidden ** 2)
    return {
        "w1": d_hidden.T @ cache["z"],
        "b1": d_hidden.sum(axis=0),
        "w2": d_out.T @ hidden,
        "b2": d_out.sum(axis=0),
        "x": (d_hidden @ net.w1) / net.feature_scale,
    }


def backward(net: PolicyNetwork, f, dl_da) -> Gradients:
    """Exact gradient of a loss with output gradient ``dl_da`` w.r.t. the parameters."""
    _, cache = forward_batch(net, f)
    grads = backward_batch(net, cache, dl_da)
    grads["x"] = grads["x"][0]
    return grads


@dataclass
class AdamState:
    """First/second moment estimates and step count."""

    step: int = 0
    m: Optional[Dict[str, np.ndarray]] = None
    v: Optional[Dict[str, np.ndarray]] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(net: PolicyNetwork, grads: Gradients, state: AdamState, lr: float) -> Tuple[PolicyNetwork, AdamState]:
    """One bias-corrected Adam update; returns new network and state."""
    params = net.params()
    m_prev = state.m or {k: np.zeros_like(p) for k, p in params.items()}
    v_prev = state.v or {k: np.zeros_like(p) for k, p in params.items()}
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ValueError(f"gradient {name} has shape {g.shape}, expected {value.shape}")
        m_new[name] = b1 * m_prev[name] + (1.0 - b1) * g
        v_new[name] = b2 * v_prev[name] + (1.0 - b2) * g * g
        m_hat = m_new[name] / (1.0 - b1 ** step)
        v_hat = v_new[name] / (1.0 - b2 ** step)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(step=step, m=m_new, v=v_new, beta1=b1, beta2=b2, eps=state.eps)
    return net.with_params(new_params), new_state


def save_checkpoint(path: Union[str, Path], net: PolicyNetwork, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write a versioned ``.npz`` checkpoint (exact float64 round trip)."""
    path = Path(path)
    meta = dict(metadata or {})
    meta["format_version"] = CHECKPOINT_VERSION
    arrays = {f.name: getattr(net, f.name) for f in fields(net)}
    with atomic_output(path) as tmp:
        with open(tmp, "wb") as fh:
            np.savez(fh, metadata=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[PolicyNetwork, Dict[str, Any]]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["metadata"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        try:
            net = PolicyNetwork(**{f.name: data[f.name] for f in fields(PolicyNetwork)})
        except KeyError as exc:
            raise ValueError(f"checkpoint is missing array {exc}") from None
    return net, meta


def describe(net: PolicyNetwork) -> Dict[str, Any]:
    """Shapes summary, used in reports."""
    return {name: list(np.shape(value)) for name, value in ((f.name, getattr(net, f.name)) for f in fields(net))}
