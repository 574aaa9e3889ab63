from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from config import ConfigError
from datapipe import extract_tuples
from simcore import (
    FLAG_NONE,
    TRACE_COLUMNS,
    ExpertReplayPolicy,
    LaneCenterPolicy,
    ScenarioConfig,
    SimState,
    arc_road,
    expert_plans,
    initial_state,
    load_scenario,
    mixed_road,
    monitor,
    parse_scenario,
    replay_heldout,
    run_closed_loop,
    run_many,
    sense,
    step_vehicle,
    straight_road,
    trace_frame,
)
from utils.statistics import calculate_trace_stats

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
FULL_LEFT = np.array([10.0, 30.0, 20.0, 60.0, 30.0, 90.0])


def cruising(x: float = 0.0, y: float = 0.0, v: float = 30.0, lead_gap: float = 50.0, lead_v: float = 25.0) -> SimState:
    return SimState(x=x, y=y, heading=0.0, v=v, lead_s=x + lead_gap, lead_v=lead_v, station=x)


class NanPolicy:
    def __call__(self, features, t):
        return np.full(6, np.nan)


# ---------------------------------------------------------------------------
# Vehicle
# ---------------------------------------------------------------------------

def test_straight_roll():
    state = cruising()
    for _ in range(100):
        state = step_vehicle(state, 0.0, 0.0, 0.01)
    assert state.x == pytest.approx(30.0, abs=1e-9)
    assert state.y == 0.0 and state.heading == 0.0
    assert state.v == 30.0
    assert state.t == pytest.approx(1.0)


def test_constant_steer_traces_circle():
    delta, wheelbase, v = 0.05, 2.7, 10.0
    radius = wheelbase / np.tan(delta)
    state = SimState(x=0.0, y=0.0, heading=0.0, v=v, lead_s=1e6, lead_v=0.0)
    steps = int(round(0.5 * np.pi * radius / v / 0.01))
    distances = []
    for _ in range(steps):
        state = step_vehicle(state, delta, 0.0, 0.01, wheelbase)
        distances.append(np.hypot(state.x, state.y - radius))
    assert state.heading == pytest.approx(np.pi / 2, rel=0.01)
    np.testing.assert_allclose(distances, radius, rtol=0.01)


def test_actuator_clamp_is_recorded():
    state = step_vehicle(cruising(), 0.0, -10.0, 0.01)
    assert state.clamp_events == 1
    assert state.v == pytest.approx(30.0 - 6.0 * 0.01)
    state = step_vehicle(state, 1.0, 0.0, 0.01)
    assert state.clamp_events == 2


def test_step_rejects_large_dt():
    with pytest.raises(ValueError):
        step_vehicle(cruising(), 0.0, 0.0, 0.1)


def test_speed_floor():
    state = cruising(v=0.01)
    for _ in range(10):
        state = step_vehicle(state, 0.0, -6.0, 0.01)
    assert state.v == 0.0


# ---------------------------------------------------------------------------
# Sensors and monitor
# ---------------------------------------------------------------------------

def scenario_on(road, **kwargs) -> ScenarioConfig:
    defaults = dict(road=road, ego_speed=30.0, lead_gap=50.0, lead_speed=25.0)
    defaults.update(kwargs)
    return ScenarioConfig(**defaults)


def test_sense_straight_centered():
    road = straight_road(1000.0)
    f = sense(initial_state(scenario_on(road)), road)
    assert f.c0l == pytest.approx(1.75, abs=1e-9)
    assert f.c0r == pytest.approx(-1.75, abs=1e-9)
    for c in (f.c1l, f.c2l, f.c1r, f.c2r):
        assert abs(c) < 1e-9
    assert f.d_lead == pytest.approx(50.0)
    assert f.v_lead == 25.0 and f.v_x == 30.0


def test_sense_arc_curvature():
    road = arc_road(500.0, 1000.0)
    f = sense(initial_state(scenario_on(road)), road)
    assert f.c2l == pytest.approx(0.001, rel=0.05)
    assert f.c2r == pytest.approx(0.001, rel=0.05)
    right = arc_road(500.0, 1000.0, direction=-1)
    assert sense(initial_state(scenario_on(right)), right).c2l == pytest.approx(-0.001, rel=0.05)


def test_sense_offset_shifts_lanes():
    road = straight_road(1000.0)
    f = sense(initial_state(scenario_on(road, ego_offset=0.5)), road)
    assert f.c0l == pytest.approx(1.25, abs=1e-6)
    assert f.c0r == pytest.approx(-2.25, abs=1e-6)


def test_sense_off_road():
    road = straight_road(100.0)
    with pytest.raises(ValueError, match="outside the road"):
        sense(cruising(x=500.0), road)


def test_monitor_examples():
    road = straight_road(1000.0)
    assert monitor(cruising(x=100.0, lead_gap=30.0, lead_v=25.0), road, 1.8) is None
    assert monitor(cruising(x=100.0, lead_gap=0.5, v=25.0, lead_v=25.0), road, 1.8) is None
    assert monitor(cruising(x=100.0, lead_gap=20.0, v=30.0, lead_v=5.0), road, 1.8) == "collision"
    assert monitor(cruising(x=100.0, y=1.0, lead_gap=80.0), road, 1.8) == "lane"
    assert monitor(cruising(x=100.0, y=-0.8, lead_gap=80.0), road, 1.8) is None


def test_sensed_lanes_agree_with_monitor():
    road = arc_road(500.0, 1000.0)
    for offset in (-0.8, -0.3, 0.0, 0.4, 0.8):
        state = initial_state(scenario_on(road, ego_offset=offset, lead_speed=32.0))
        f = sense(state, road)
        if f.c0l > 0.9 and f.c0r < -0.9:
            assert monitor(state, road, 1.8) is None


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def test_parse_scenario():
    scenario, tracker = parse_scenario({
        "road.kind": "arc", "road.radius": "500", "road.length": "1000",
        "ego.speed": "30", "lead.gap": "50", "lead.speed": "27", "pid.kp": "0.9",
    })
    assert scenario.road.kind == "arc" and scenario.road.radius == 500.0
    assert scenario.lead_speed == 27.0
    assert tracker.kp == 0.9


@pytest.mark.parametrize("values,key", [
    ({"road.kind": "arc", "road.radiuss": "500"}, "road.radiuss"),
    ({"road.kind": "arc", "road.radius": "50"}, "road"),
    ({"road.kind": "spiral"}, "road.kind"),
    ({"lead.gap": "-5"}, "scenario"),
])
def test_parse_scenario_errors(values, key):
    with pytest.raises(ConfigError) as err:
        parse_scenario(values)
    assert err.value.key == key


def test_load_shipped_scenarios():
    scenario, _ = load_scenario(SCENARIO_DIR / "arc500.env")
    assert scenario.road.radius == 500.0


def test_mixed_road_is_seeded():
    a, b, c = mixed_road(3000.0, 1), mixed_road(3000.0, 1), mixed_road(3000.0, 2)
    np.testing.assert_array_equal(a.xs, b.xs)
    assert not np.array_equal(a.ys, c.ys)


def test_project_round_trip_on_arc():
    road = arc_road(500.0, 1000.0)
    point = road.lateral_point(321.0, 0.7)
    station, offset = road.project(point)
    assert station == pytest.approx(321.0, abs=0.01)
    assert offset == pytest.approx(0.7, abs=0.01)


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

def test_oracle_completes_arc():
    scenario = scenario_on(arc_road(500.0, 1000.0), lead_speed=32.0, name="arc")
    report = run_closed_loop(scenario, LaneCenterPolicy())
    assert report.flag == FLAG_NONE
    assert report.completion == 1.0
    assert report.trace["offset"].abs().max() < 0.5
    assert list(trace_frame(report).columns) == TRACE_COLUMNS


def test_full_left_plan_leaves_lane():
    scenario = scenario_on(straight_road(1000.0), lead_speed=32.0)
    report = run_closed_loop(scenario, ExpertReplayPolicy((FULL_LEFT,)))
    assert report.flag == "lane"
    assert report.completion < 0.1
    assert report.flag_time < 3.0


def test_non_finite_output_aborts():
    report = run_closed_loop(scenario_on(straight_road(500.0)), NanPolicy())
    assert report.flag == "abort"
    assert report.completion < 1.0
    assert any("non-finite" in d for d in report.diagnostics)


def test_timed_scenario_completes():
    scenario = scenario_on(straight_road(2000.0), lead_speed=32.0, duration=5.0)
    report = run_closed_loop(scenario, LaneCenterPolicy())
    assert report.completion == 1.0
    assert len(report.trace) == 50


def test_closed_loop_is_deterministic():
    scenario = scenario_on(arc_road(500.0, 300.0), lead_speed=28.0)
    first = run_closed_loop(scenario, LaneCenterPolicy())
    second = run_closed_loop(scenario, LaneCenterPolicy())
    assert first.completion == second.completion and first.flag == second.flag
    pd.testing.assert_frame_equal(first.trace, second.trace)


def test_run_many_keeps_job_order():
    jobs = [(scenario_on(straight_road(200.0), name=f"s{i}", lead_speed=30.0 + i), LaneCenterPolicy())
            for i in range(3)]
    reports = run_many(jobs)
    assert [r.name for r in reports] == ["s0", "s1", "s2"]
    assert all(r.completion == 1.0 for r in reports)


# ---------------------------------------------------------------------------
# Held-out replay
# ---------------------------------------------------------------------------

def test_expert_self_replay(steady_maneuver):
    tuples = extract_tuples(steady_maneuver)
    held = steady_maneuver.window(0.0, 10.0)
    plans = expert_plans(tuples, held.start_t, 10.0)
    assert len(plans) == 10
    result = replay_heldout(held, ExpertReplayPolicy(plans))
    assert len(result.paired) == 50
    assert list(result.paired.columns) == ["t", "expert_x", "expert_vx", "expert_offset",
                                           "policy_x", "policy_vx", "policy_offset", "policy_flag"]
    stats = calculate_trace_stats(result.paired)
    assert stats["vx_rmse"] < 0.1
    assert stats["offset_rmse"] < 0.1
    assert result.report.flag == FLAG_NONE


def test_expert_plans_missing_anchor(steady_tuples):
    with pytest.raises(ValueError, match="no expert tuple"):
        expert_plans(steady_tuples, 0.3, 5.0)


def test_replay_rejects_gaps(steady_maneuver):
    records = steady_maneuver.records[:20] + steady_maneuver.records[30:60]
    with pytest.raises(ValueError, match="gaps"):
        replay_heldout(replace(steady_maneuver, records=records), LaneCenterPolicy())


# ---------------------------------------------------------------------------
# Tracking and trace bookkeeping
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("speed", [25.0, 31.94])
def test_tracker_holds_matched_straight_plan(speed):
    plan = np.array([speed * 20.0 / 3.0, 0.0, speed * 40.0 / 3.0, 0.0, speed * 20.0, 0.0])
    scenario = scenario_on(straight_road(1500.0), ego_speed=speed, lead_speed=speed + 2.0, duration=10.0)
    report = run_closed_loop(scenario, ExpertReplayPolicy((plan,)))
    assert report.flag == FLAG_NONE
    settled = report.trace[report.trace["t"] >= 3.0]
    assert len(settled) == 70
    assert settled["offset"].abs().max() < 0.05
    assert (settled["vx"] - speed).abs().max() < 0.5


def test_trace_flags_belong_to_the_logged_state():
    scenario = scenario_on(straight_road(1000.0), lead_speed=32.0, duration=6.0)
    report = run_closed_loop(scenario, ExpertReplayPolicy((FULL_LEFT,)), stop_on_flag=False)
    trace = report.trace
    outside = trace["offset"].abs() + scenario.track / 2.0 > scenario.road.lane_width / 2.0
    assert outside.any() and not outside.iloc[0]
    assert ((trace["flag"] == "lane") == outside).all()
    first = int(np.argmax(outside.to_numpy()))
    assert trace["t"].iloc[first - 1] < report.flag_time <= trace["t"].iloc[first] + 1e-9


def test_stopped_run_traces_the_flagged_state():
    scenario = scenario_on(straight_road(1000.0), lead_speed=32.0)
    report = run_closed_loop(scenario, ExpertReplayPolicy((FULL_LEFT,)))
    last = report.trace.iloc[-1]
    assert last["flag"] == "lane"
    assert last["t"] == pytest.approx(report.flag_time, abs=1e-6)
    assert (report.trace["flag"].iloc[:-1] == FLAG_NONE).all()


def test_target_behind_is_reported_once_per_plan():
    backward = np.array([-10.0, 0.0, -20.0, 0.0, -30.0, 0.0])
    scenario = scenario_on(straight_road(1000.0), lead_speed=32.0, duration=5.0)
    report = run_closed_loop(scenario, ExpertReplayPolicy((backward,)))
    behind = [d for d in report.diagnostics if "target behind" in d]
    assert 1 <= len(behind) <= 5


def test_mixed_road_curvature_is_smooth():
    road = mixed_road(12000.0, 3)
    curvature = np.gradient(road.headings, road.stations)
    assert np.max(np.abs(curvature)) <= 1.0 / 2000.0 + 1e-9
    assert np.max(np.abs(np.diff(curvature))) < 1e-5
    assert np.any(curvature == 0.0)
    assert np.max(np.abs(curvature)) > 1.0 / 4000.0 * 0.9
