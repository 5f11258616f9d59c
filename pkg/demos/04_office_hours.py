"""A day of traffic against the scaling controller, one tick per minute.

Demand follows office hours: nothing overnight, a morning climb, a lunch
dip, an afternoon peak, then silence. Watch workers rise instantly with
load but drain away one cooldown step at a time.
"""

import math

from bdps.elasticity import ClusterState, ScalePolicy, apply_action, tick

policy = ScalePolicy(min_on=1, max_local=8, capacity_per_worker=100.0,
                     scale_up_threshold=0.8, cooldown=600.0)


def demand(minute: int) -> float:
    hour = minute / 60.0
    if hour < 8 or hour >= 18:
        return 0.0
    peak = 520.0
    morning = math.exp(-((hour - 11.0) ** 2) / 2.0)
    afternoon = math.exp(-((hour - 15.5) ** 2) / 1.2)
    return peak * max(morning, afternoon)


state = ClusterState(active_workers=policy.min_on)
print("time   req/s  workers")
for minute in range(0, 24 * 60, 15):
    now = minute * 60.0
    state.observed_rate = demand(minute)
    action = tick(state, policy, now)
    if action:
        apply_action(state, action, now)
    if minute % 60 == 0 or action:
        marker = {"up": " <- scale up", "down": " <- scale down"}.get(
            action.direction, "")
        print(f"{minute // 60:02d}:{minute % 60:02d}  {state.observed_rate:5.0f}"
              f"  {'#' * state.active_workers:<8}{marker}")

print()
print(f"busiest moment needed {math.ceil(520 / (100 * 0.8))} workers; "
       "the evening decay sheds one per 10-minute cooldown, never a cliff.")
