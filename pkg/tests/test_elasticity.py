import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdps.elasticity import (
    NO_ACTION,
    ClusterState,
    PolicyError,
    RateWindow,
    ScaleAction,
    ScalePolicy,
    apply_action,
    desired_workers,
    tick,
)


def test_zero_rate_keeps_always_on_floor():
    policy = ScalePolicy(min_on=2, max_local=10)
    assert desired_workers(0.0, policy) == 2


def test_rate_250_needs_three_workers():
    policy = ScalePolicy(min_on=1, max_local=20, capacity_per_worker=100,
                         scale_up_threshold=1.0)
    assert desired_workers(250, policy) == 3


def test_huge_rate_saturates_at_max_local():
    policy = ScalePolicy(min_on=1, max_local=20, capacity_per_worker=100,
                         scale_up_threshold=1.0)
    assert desired_workers(10_000, policy) == 20


def test_threshold_lowers_effective_capacity():
    policy = ScalePolicy(capacity_per_worker=100, scale_up_threshold=0.8)
    # 250 / 80 -> 4 workers once headroom is accounted for
    assert desired_workers(250, policy) == 4


def test_scale_up_is_immediate():
    policy = ScalePolicy(scale_up_threshold=1.0)
    state = ClusterState(active_workers=1, observed_rate=250)
    assert tick(state, policy, now=5.0) == ScaleAction("up", 2)


def test_scale_down_waits_for_cooldown():
    policy = ScalePolicy(scale_up_threshold=1.0, cooldown=60)
    state = ClusterState(active_workers=3, observed_rate=0, last_scale_down=100.0)
    assert tick(state, policy, now=130.0) is NO_ACTION
    assert tick(state, policy, now=160.0) == ScaleAction("down", 1)


def test_never_scales_below_min_on():
    policy = ScalePolicy(min_on=2, scale_up_threshold=1.0)
    state = ClusterState(active_workers=2, observed_rate=0)
    assert tick(state, policy, now=1e9) is NO_ACTION


def run_controller(rate_at, policy, horizon, step=1.0):
    """Drive tick/apply_action over a rate trace; returns [(t, workers)]."""
    state = ClusterState(active_workers=policy.min_on)
    trace = []
    t = 0.0
    while t <= horizon:
        state.observed_rate = rate_at(t)
        apply_action(state, tick(state, policy, t), t)
        trace.append((t, state.active_workers))
        t += step
    return trace


def oracle_controller(rate_at, policy, horizon, step=1.0):
    """Straight-line restatement of the two scaling rules, kept separate
    from the implementation on purpose."""
    workers = policy.min_on
    last_down = -math.inf
    trace = []
    t = 0.0
    while t <= horizon:
        need = max(policy.min_on,
                   min(policy.max_local,
                       math.ceil(rate_at(t) / (policy.capacity_per_worker
                                               * policy.scale_up_threshold))))
        if need > workers:
            workers = need
        elif need < workers and t - last_down >= policy.cooldown:
            workers -= 1
            last_down = t
        trace.append((t, workers))
        t += step
    return trace


def step_load(t):
    return 250.0 if 10 <= t < 100 else 0.0


def test_step_load_trace_matches_oracle():
    policy = ScalePolicy(min_on=1, max_local=20, capacity_per_worker=100,
                         scale_up_threshold=1.0, cooldown=60)
    got = run_controller(step_load, policy, horizon=300)
    assert got == oracle_controller(step_load, policy, horizon=300)


def test_step_load_rises_immediately_and_decays_stepwise():
    policy = ScalePolicy(min_on=1, max_local=20, capacity_per_worker=100,
                         scale_up_threshold=1.0, cooldown=60)
    trace = dict(run_controller(step_load, policy, horizon=300))
    assert trace[9.0] == 1
    assert trace[10.0] == 3     # up in the same tick that sees the load
    assert trace[99.0] == 3
    assert trace[100.0] == 2    # first down is immediate (no prior down)
    assert trace[159.0] == 2
    assert trace[160.0] == 1    # second down waits out the cooldown
    assert trace[300.0] == 1


def test_policy_validation():
    with pytest.raises(PolicyError):
        ScalePolicy(min_on=0)
    with pytest.raises(PolicyError):
        ScalePolicy(min_on=5, max_local=3)
    with pytest.raises(PolicyError):
        ScalePolicy(scale_up_threshold=0)
    with pytest.raises(PolicyError):
        ScalePolicy(scale_up_threshold=1.2)
    with pytest.raises(PolicyError):
        ScalePolicy(capacity_per_worker=-1)
    with pytest.raises(PolicyError):
        desired_workers(-1, ScalePolicy())


def test_rate_window_counts_only_recent_events():
    win = RateWindow(window=10)
    for t in (0.5, 1.0, 9.0, 9.5):
        win.observe(t)
    assert win.rate(now=10.0) == pytest.approx(4 / 10)
    assert win.rate(now=18.5) == pytest.approx(2 / 10)  # 0.5 and 1.0 expired
    assert win.rate(now=40.0) == 0.0


policies = st.builds(
    ScalePolicy,
    min_on=st.integers(min_value=1, max_value=4),
    max_local=st.integers(min_value=4, max_value=30),
    capacity_per_worker=st.floats(min_value=1, max_value=500,
                                  allow_nan=False, allow_infinity=False),
    scale_up_threshold=st.floats(min_value=0.1, max_value=1.0),
    cooldown=st.floats(min_value=0, max_value=120),
)


@settings(max_examples=80, deadline=None)
@given(policy=policies,
       rates=st.lists(st.floats(min_value=0, max_value=1e5, allow_nan=False),
                      min_size=2, max_size=20))
def test_desired_workers_monotone_and_bounded(policy, rates):
    outputs = [desired_workers(r, policy) for r in sorted(rates)]
    assert outputs == sorted(outputs)
    assert all(policy.min_on <= n <= policy.max_local for n in outputs)


@settings(max_examples=50, deadline=None)
@given(policy=policies,
       rates=st.lists(st.floats(min_value=0, max_value=5000, allow_nan=False),
                      min_size=1, max_size=50))
def test_tick_sequences_are_deterministic(policy, rates):
    def run():
        state = ClusterState(active_workers=policy.min_on)
        actions = []
        for i, r in enumerate(rates):
            state.observed_rate = r
            action = tick(state, policy, float(i))
            apply_action(state, action, float(i))
            actions.append(action)
        return actions
    assert run() == run()


@settings(max_examples=50, deadline=None)
@given(policy=policies, rate=st.floats(min_value=0, max_value=5000, allow_nan=False))
def test_constant_rate_never_flaps(policy, rate):
    state = ClusterState(active_workers=policy.max_local, observed_rate=rate)
    down_times = []
    for i in range(600):
        action = tick(state, policy, float(i))
        apply_action(state, action, float(i))
        assert action.direction != "up" or state.active_workers <= policy.max_local
        if action.direction == "down":
            down_times.append(float(i))
    for a, b in zip(down_times, down_times[1:]):
        assert b - a >= policy.cooldown
    assert state.active_workers >= policy.min_on
