import numpy as np
import pandas as pd
import pytest

from config import ConfigError
from datapipe import ExperienceTuple
from losses import BarrierConfig
from policy_net import PARAM_NAMES, FeatureVector, forward
from training import (
    HISTORY_COLUMNS,
    NonFiniteLossError,
    TrainConfig,
    evaluate_offline,
    save_history,
    train,
)

CENTERED = FeatureVector(1.75, 0.0, 0.0, -1.75, 0.0, 0.0, 30.0, 28.0, 80.0)
TARGET = np.array([10.0, 0.5, 20.0, 1.0, 30.0, -0.5])


def repeated_tuples(n: int = 50):
    return [ExperienceTuple(CENTERED, TARGET.copy(), np.zeros((20, 3)), 0, 0.2 * i) for i in range(n)]


def lane_consistent_tuples(n: int = 64, seed: int = 0):
    """Straight-lane plans through the lane center at constant speed, varied offset and heading."""
    rng = np.random.default_rng(seed)
    times = BarrierConfig().control_times()
    tuples = []
    for i in range(n):
        offset, slope = rng.uniform(-0.4, 0.4), rng.uniform(-0.002, 0.002)
        speed, gap = rng.uniform(28.0, 34.0), rng.uniform(40.0, 90.0)
        features = FeatureVector(1.75 + offset, slope, 0.0, -1.75 + offset, slope, 0.0, speed, speed, gap)
        ax = speed * times
        target = np.column_stack([ax, offset + slope * ax]).reshape(-1)
        tuples.append(ExperienceTuple(features, target, np.zeros((20, 3)), 0, 0.2 * i))
    return tuples


def assert_same_network(a, b):
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_bc_memorizes_single_sample():
    cfg = TrainConfig(mode="BC", epochs=300, batch_size=32, lr=1e-2, seed=0)
    net, history = train(repeated_tuples(), cfg)
    assert len(history) == 300
    assert history[-1].barrier == 0.0
    assert history[-1].imitation < 1e-3
    np.testing.assert_allclose(forward(net, CENTERED), TARGET, atol=0.05)


def test_bc_fits_varied_plans():
    tuples = lane_consistent_tuples()
    net, history = train(tuples, TrainConfig(mode="BC", epochs=400, batch_size=16, lr=3e-3, seed=2))
    assert history[-1].imitation < 0.05 * history[0].imitation
    assert evaluate_offline(net, tuples).mean_imitation < 0.05 * history[0].imitation


def test_safe_imitation_decreases_monotonically_after_warmup():
    tuples = lane_consistent_tuples()
    cfg = TrainConfig(mode="SAFE", epochs=80, batch_size=len(tuples), lr=1e-3, seed=1)
    _, history = train(tuples, cfg)
    imitation = np.array([h.imitation for h in history])
    assert np.all(np.diff(imitation[4:]) < 0.0)
    assert imitation[-1] < imitation[4]
    assert history[-1].barrier > 0.0


def test_safe_policy_respects_lane_bounds_on_training_set():
    tuples = lane_consistent_tuples()
    cfg = TrainConfig(mode="SAFE", epochs=200, batch_size=16, lr=3e-3, seed=4)
    net, _ = train(tuples, cfg)
    metrics = evaluate_offline(net, tuples, cfg)
    assert metrics.n == len(tuples)
    assert metrics.bound_satisfaction >= 0.99


def test_safe_policy_respects_lane_bounds_on_expert_log(highway_tuples):
    cfg = TrainConfig(mode="SAFE", epochs=150, batch_size=32, lr=1e-3, seed=0)
    net, history = train(highway_tuples, cfg)
    metrics = evaluate_offline(net, highway_tuples, cfg)
    assert metrics.bound_satisfaction >= 0.99
    assert history[-1].imitation < history[0].imitation


def test_learning_rate_follows_cosine_schedule():
    cfg = TrainConfig(epochs=11, lr=1e-3, lr_min=1e-5)
    assert cfg.learning_rate(1) == pytest.approx(1e-3)
    assert cfg.learning_rate(6) == pytest.approx(0.5 * (1e-3 + 1e-5))
    assert cfg.learning_rate(11) == pytest.approx(1e-5)
    rates = [cfg.learning_rate(e) for e in range(1, 12)]
    assert all(b < a for a, b in zip(rates, rates[1:]))
    assert TrainConfig(epochs=1, lr=1e-3).learning_rate(1) == 1e-3
    assert TrainConfig(epochs=5, lr=1e-6, lr_min=1e-5).learning_rate(5) == pytest.approx(1e-6)


def test_zero_weight_barrier_reproduces_bc(steady_tuples):
    bc, bc_history = train(steady_tuples, TrainConfig(mode="BC", epochs=5, seed=3))
    safe, safe_history = train(steady_tuples, TrainConfig(mode="SAFE", epochs=5, seed=3,
                                                          barrier=BarrierConfig(K=0.0)))
    assert_same_network(bc, safe)
    assert [h.imitation for h in bc_history] == [h.imitation for h in safe_history]


def test_training_is_deterministic(steady_tuples):
    cfg = TrainConfig(mode="SAFE", epochs=3, seed=7)
    first, _ = train(steady_tuples, cfg)
    second, _ = train(steady_tuples, cfg)
    assert_same_network(first, second)
    other, _ = train(steady_tuples, TrainConfig(mode="SAFE", epochs=3, seed=8))
    assert not np.array_equal(first.w1, other.w1)


def test_divergence_raises(steady_tuples):
    with pytest.raises(NonFiniteLossError) as err:
        train(steady_tuples, TrainConfig(mode="BC", epochs=3, lr=1e300))
    assert err.value.epoch == 1


def test_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        train([], TrainConfig())


def test_train_config_from_mapping():
    cfg = TrainConfig.from_mapping({"train.epochs": "20", "train.lr_min": "0", "barrier.k": "10",
                                    "safety.n_scenarios": "3"}, "SAFE", 4)
    assert cfg.epochs == 20 and cfg.barrier.K == 10.0 and cfg.seed == 4 and cfg.lr_min == 0.0
    assert cfg.metadata()["barrier"]["K"] == 10.0
    assert "barrier" not in TrainConfig(mode="BC").metadata()
    with pytest.raises(ConfigError) as err:
        TrainConfig.from_mapping({"train.epoch": "20"}, "BC", 0)
    assert err.value.key == "train.epoch"
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"barrier.k": "-1"}, "SAFE", 0)
    with pytest.raises(ValueError):
        TrainConfig(mode="DAGGER")


def test_history_csv(tmp_path, steady_tuples):
    _, history = train(steady_tuples[:40], TrainConfig(mode="BC", epochs=4))
    frame = pd.read_csv(save_history(history, tmp_path / "history.csv"))
    assert list(frame.columns) == HISTORY_COLUMNS
    assert frame["epoch"].tolist() == [1, 2, 3, 4]
