"""End-to-end experiments on a noisy 115 km/h expert log: small-data training, held-out replay, arc geometry."""
import numpy as np
import pytest

from conftest import SCENARIO_DIR
from datapipe import generate_expert_log, leave_one_out_split, load_expert_scenario, process_log
from losses import lane_bound_margins
from policy_net import FeatureVector
from simcore import FLAG_NONE, LaneCenterPolicy, NetworkPolicy, replay_heldout
from training import TrainConfig, evaluate_offline, train
from utils.statistics import calculate_trace_stats

pytestmark = pytest.mark.slow

LOG_S = 300.0
MAX_TUPLES = 300
SEEDS = range(10)


@pytest.fixture(scope="module")
def highway_split():
    scenario, tracker_cfg, expert_cfg = load_expert_scenario(SCENARIO_DIR / "highway115.env")
    log = generate_expert_log(scenario, LOG_S, seed=scenario.seed, expert_cfg=expert_cfg,
                              tracker_cfg=tracker_cfg, dropout_times=[100.0, 200.0])
    maneuvers = process_log(log.records, source="highway115").maneuvers
    assert len(maneuvers) == 3
    train_tuples, held = leave_one_out_split(maneuvers, 0)
    return train_tuples, held.window(0.0, 10.0), tracker_cfg


def small_training_set(tuples, seed):
    pick = np.sort(np.random.default_rng(seed).choice(len(tuples), MAX_TUPLES, replace=False))
    return [tuples[i] for i in pick]


@pytest.fixture(scope="module")
def safe_replays(highway_split):
    train_tuples, window, tracker_cfg = highway_split
    replays = []
    for seed in SEEDS:
        tuples = small_training_set(train_tuples, seed)
        cfg = TrainConfig(mode="SAFE", epochs=300, batch_size=32, lr=1e-3, seed=seed)
        net, _ = train(tuples, cfg)
        replays.append((evaluate_offline(net, tuples, cfg), replay_heldout(window, NetworkPolicy(net), tracker_cfg)))
    return replays


def test_safe_policy_completes_the_held_out_maneuver(safe_replays):
    completed = sum(1 for _, replay in safe_replays if replay.report.flag == FLAG_NONE)
    assert completed >= 9


def test_safe_policy_tracks_the_expert(safe_replays):
    close = 0
    for _, replay in safe_replays:
        stats = calculate_trace_stats(replay.paired)
        assert stats["samples"] == 50
        close += stats["vx_rmse"] < 2.0 and stats["offset_rmse"] < 0.5
    assert close >= 9


def test_safe_policy_respects_lane_bounds_offline(safe_replays):
    for metrics, _ in safe_replays:
        assert metrics.bound_satisfaction >= 0.99


@pytest.mark.parametrize("direction", [1, -1])
def test_lane_center_plan_leaves_the_shrunk_lane_on_a_tight_arc(direction):
    # 500 m radius at 28 m/s: the middle control points of the lane-center plan sit ~34 m off the lane center
    c2 = direction / (2.0 * 500.0)
    features = FeatureVector(1.75, 0.0, c2, -1.75, 0.0, c2, 28.0, 28.0, 60.0)
    plan = LaneCenterPolicy()(features, 0.0)
    left, right = lane_bound_margins(features.as_array(), plan, track=1.8)
    worst = np.maximum(left, right)[0]
    assert worst[0] > 30.0 and worst[1] > 30.0
    assert worst[2] == pytest.approx(-0.85, abs=1e-6)
