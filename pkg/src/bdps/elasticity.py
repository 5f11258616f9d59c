"""Worker autoscaling: always-on floor, demand-driven ceiling.

The controller keeps ``min_on`` workers up at all times and sizes the rest
of the local pool from the observed request rate: enough workers that each
one runs at or below ``scale_up_threshold`` of its capacity. Scale-up takes
effect on the tick that observes the demand; scale-down is deliberately
slow, one worker per cooldown period, so a noisy rate cannot flap the pool.

``tick`` is a pure function of (state, policy, now); the caller applies the
returned action. That keeps the controller replayable: identical inputs
produce identical action sequences, which the simulation relies on.

Time is a float in seconds throughout (real or simulated).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .errors import BdpsError


class PolicyError(BdpsError):
    pass


@dataclass(frozen=True)
class ScalePolicy:
    min_on: int = 1
    max_local: int = 20
    capacity_per_worker: float = 100.0  # sustained requests/sec per worker
    scale_up_threshold: float = 0.8     # target utilization fraction
    cooldown: float = 60.0              # seconds between scale-down steps
    overflow_queue_cap: int = 50        # queued requests before remote overflow

    def __post_init__(self):
        if not (1 <= self.min_on <= self.max_local):
            raise PolicyError(f"need 1 <= min_on <= max_local, got {self.min_on}..{self.max_local}")
        if not (0 < self.scale_up_threshold <= 1):
            raise PolicyError(f"scale_up_threshold must be in (0, 1], got {self.scale_up_threshold}")
        if self.capacity_per_worker <= 0:
            raise PolicyError("capacity_per_worker must be positive")
        if self.cooldown < 0:
            raise PolicyError("cooldown must be >= 0")


@dataclass
class ClusterState:
    active_workers: int
    queue_depth: int = 0
    observed_rate: float = 0.0
    last_scale_down: float = -math.inf


@dataclass(frozen=True)
class ScaleAction:
    direction: str  # "none" | "up" | "down"
    count: int = 0

    def __bool__(self) -> bool:
        return self.direction != "none"


NO_ACTION = ScaleAction("none")


def desired_workers(observed_rate: float, policy: ScalePolicy) -> int:
    """Smallest worker count keeping per-worker load at or under threshold."""
    if observed_rate < 0:
        raise PolicyError("observed_rate must be >= 0")
    raw = math.ceil(observed_rate / (policy.capacity_per_worker * policy.scale_up_threshold))
    return max(policy.min_on, min(policy.max_local, raw))


def tick(state: ClusterState, policy: ScalePolicy, now: float) -> ScaleAction:
    """One control decision. Up reaches the target in a single step; down
    sheds at most one worker per cooldown period."""
    desired = desired_workers(state.observed_rate, policy)
    if desired > state.active_workers:
        return ScaleAction("up", desired - state.active_workers)
    if desired < state.active_workers and now - state.last_scale_down >= policy.cooldown:
        return ScaleAction("down", 1)
    return NO_ACTION


def apply_action(state: ClusterState, action: ScaleAction, now: float) -> None:
    if action.direction == "up":
        state.active_workers += action.count
    elif action.direction == "down":
        state.active_workers -= action.count
        state.last_scale_down = now


class RateWindow:
    """Sliding-window request-rate estimator (default 10 s)."""

    def __init__(self, window: float = 10.0):
        if window <= 0:
            raise PolicyError("window must be positive")
        self.window = window
        self._events: deque[float] = deque()

    def observe(self, t: float) -> None:
        self._events.append(t)

    def rate(self, now: float) -> float:
        cutoff = now - self.window
        while self._events and self._events[0] <= cutoff:
            self._events.popleft()
        return len(self._events) / self.window

    def __len__(self) -> int:
        return len(self._events)
