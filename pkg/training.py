"""Training loop for the two compared modes: behavioral cloning (BC) and safe imitation (SAFE)."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import ConfigError, check_keys, get_float, get_int
from losses import BarrierConfig, barrier_batch, lane_bound_margins
from policy_net import N_HIDDEN, AdamState, PolicyNetwork, adam_step, backward_batch, forward_batch, init
from utils.fileio import write_csv

MODES = ("BC", "SAFE")
HISTORY_COLUMNS = ["epoch", "loss", "imitation", "barrier"]

TRAIN_KEYS = (
    "train.epochs", "train.batch_size", "train.lr", "train.lr_min", "train.hidden",
    "barrier.k", "barrier.track", "barrier.lane_width",
)


class NonFiniteLossError(RuntimeError):
    """Training diverged; ``epoch`` and ``batch`` locate the offending step."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; ``barrier`` only applies in SAFE mode."""

    mode: str = "SAFE"
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-3
    lr_min: float = 1e-5
    seed: int = 0
    n_hidden: int = N_HIDDEN
    barrier: BarrierConfig = field(default_factory=BarrierConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lr_min < 0:
            raise ValueError("lr_min must be non-negative")
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be at least 1")

    @property
    def active_barrier(self) -> Optional[BarrierConfig]:
        return self.barrier if self.mode == "SAFE" else None

    def learning_rate(self, epoch: int) -> float:
        """Cosine decay from ``lr`` at epoch 1 to ``lr_min`` at the last epoch."""
        floor = min(self.lr_min, self.lr)
        if self.epochs == 1:
            return self.lr
        progress = (epoch - 1) / (self.epochs - 1)
        return floor + 0.5 * (self.lr - floor) * (1.0 + np.cos(np.pi * progress))

    @classmethod
    def from_mapping(cls, values: Dict[str, str], mode: str, seed: int) -> "TrainConfig":
        """Settings from ``train.*`` and ``barrier.*`` keys of an experiment config."""
        check_keys(values, TRAIN_KEYS, prefix="train.")
        check_keys(values, TRAIN_KEYS, prefix="barrier.")
        base = cls()
        try:
            barrier = BarrierConfig(
                K=get_float(values, "barrier.k", base.barrier.K),
                T=get_float(values, "barrier.track", base.barrier.T),
                lane_width=get_float(values, "barrier.lane_width", base.barrier.lane_width),
            )
            return cls(
                mode=mode,
                epochs=get_int(values, "train.epochs", base.epochs),
                batch_size=get_int(values, "train.batch_size", base.batch_size),
                lr=get_float(values, "train.lr", base.lr),
                lr_min=get_float(values, "train.lr_min", base.lr_min),
                seed=seed,
                n_hidden=get_int(values, "train.hidden", base.n_hidden),
                barrier=barrier,
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("train", str(exc)) from None

    def metadata(self) -> dict:
        meta = {"mode": self.mode, "epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "lr_min": self.lr_min, "seed": self.seed, "n_hidden": self.n_hidden}
        if self.mode == "SAFE":
            meta["barrier"] = self.barrier.as_dict()
        return meta


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    imitation: float
    barrier: float


def _dataset(tuples: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    features = np.array([tp.features.as_array() for tp in tuples], dtype=float)
    targets = np.array([np.asarray(tp.target, dtype=float) for tp in tuples], dtype=float)
    return features, targets


def train(tuples: Sequence, cfg: TrainConfig, verbose: bool = False) -> Tuple[PolicyNetwork, List[EpochStats]]:
    """
    Minibatch Adam on the mean per-sample loss, learning rate on a cosine schedule.

    BC minimizes the imitation loss; SAFE adds the barrier. Normalization
    constants come from ``tuples``; batches are reshuffled every epoch from
    a generator seeded by ``cfg.seed``.

    Args:
        tuples: Experience tuples (not modified)
        cfg: Training configuration
        verbose: Show a progress bar

    Returns:
        (trained network, per-epoch history)
    """
    if len(tuples) == 0:
        raise ValueError("cannot train on an empty dataset")
    features, targets = _dataset(tuples)
    if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
        raise ValueError("dataset contains non-finite values")
    net = init(cfg.seed, features, targets, cfg.n_hidden)
    rng = np.random.default_rng([cfg.seed, 1])
    adam = AdamState()
    barrier_cfg = cfg.active_barrier
    n = len(features)
    history: List[EpochStats] = []

    bar = tqdm(range(1, cfg.epochs + 1), desc=f"Training {cfg.mode}", disable=not verbose)
    for epoch in bar:
        lr = cfg.learning_rate(epoch)
        order = rng.permutation(n)
        sum_imit = 0.0
        sum_barrier = 0.0
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            out, cache = forward_batch(net, features[idx])
            diff = out - targets[idx]
            imit = np.sum(diff * diff, axis=1)
            grad = 2.0 * diff
            if barrier_cfg is not None:
                b_value, b_grad = barrier_batch(features[idx], out, barrier_cfg)
                grad = grad + b_grad
            else:
                b_value = np.zeros(len(idx))
            if not (np.all(np.isfinite(imit)) and np.all(np.isfinite(b_value)) and np.all(np.isfinite(grad))):
                raise NonFiniteLossError(epoch, batch)
            sum_imit += float(imit.sum())
            sum_barrier += float(b_value.sum())
            net, adam = adam_step(net, backward_batch(net, cache, grad / len(idx)), adam, lr)
        stats = EpochStats(epoch, (sum_imit + sum_barrier) / n, sum_imit / n, sum_barrier / n)
        history.append(stats)
        bar.set_postfix(loss=f"{stats.loss:.4g}")
    return net, history


@dataclass(frozen=True)
class OfflineMetrics:
    mean_imitation: float
    bound_satisfaction: float
    n: int


def evaluate_offline(net: PolicyNetwork, tuples: Sequence, cfg: Union[BarrierConfig, TrainConfig, None] = None) -> OfflineMetrics:
    """Mean imitation loss and the fraction of predictions with every control point inside the lane bounds."""
    if isinstance(cfg, TrainConfig):
        cfg = cfg.barrier
    cfg = cfg or BarrierConfig()
    if len(tuples) == 0:
        return OfflineMetrics(float("nan"), float("nan"), 0)
    features, targets = _dataset(tuples)
    out, _ = forward_batch(net, features)
    imitation = np.sum((out - targets) ** 2, axis=1)
    left, right = lane_bound_margins(features, out, cfg.T)
    inside = np.all(left <= 0.0, axis=1) & np.all(right <= 0.0, axis=1)
    return OfflineMetrics(float(imitation.mean()), float(inside.mean()), len(tuples))


def history_frame(history: Sequence[EpochStats]) -> pd.DataFrame:
    return pd.DataFrame([(h.epoch, h.loss, h.imitation, h.barrier) for h in history], columns=HISTORY_COLUMNS)


def save_history(history: Sequence[EpochStats], path: Union[str, Path]) -> Path:
    """Per-epoch metrics CSV."""
    return write_csv(history_frame(history), path)
