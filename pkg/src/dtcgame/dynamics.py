"""Day-to-day better-response dynamics.

Two kinds are provided:

* ``naive``: each day one user, drawn uniformly, tries one uniformly drawn free
  tick and moves if its forecast is strictly lower than the current cost.
* ``fixation``: users are frozen left to right once they experience the first
  user's cost C^r; when the prefix stops growing the eventual profile tells
  whether the first departure is too early or too late, a bound on it is
  tightened and all users are released until the first departure re-enters the
  bracket.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .core_model import DTCError, FlowState, GameConfig, TimeProfile
from .forecast import sample_better_response

log = logging.getLogger(__name__)

NAIVE = "naive"
FIXATION = "fixation"

# day event tags
INIT = "init"
FIX = "fix"
MOVE = "move"
NO_MOVE = "no-move"
RELEASE = "release"
BOUND_UPDATE = "bound-update"

# eventual-profile classes
CONVERGED = "converged"
TERMINAL_QUEUE = "all-equal-with-terminal-queue"
ABOVE = "some-above-Cr"
BELOW = "some-below-Cr"
ANOMALY = "anomaly"


class DynamicsInvariantError(DTCError):
    """A guarantee of the fixation dynamics was broken (implementation bug)."""


@dataclass
class DynamicsParams:
    max_candidates: int = 100
    stuck_threshold: int = 10_000
    lower_bound: int | None = None  # ticks; None means -horizon
    upper_bound: int | None = None  # ticks; None means +horizon
    check_invariants: bool = True


@dataclass
class DynamicsState:
    flow: FlowState
    rng: random.Random
    day: int = 1
    reference_cost: int = 0  # cost units
    fixed_prefix: int = 0
    lower_bound: int = 0
    upper_bound: int = 0
    stuck_counter: int = 0
    releasing: bool = False
    bound_updates: int = 0
    anomalies: int = 0

    @property
    def config(self) -> GameConfig:
        return self.flow.config

    @property
    def profile(self) -> TimeProfile:
        return self.flow.profile()

    @property
    def first_departure(self) -> int:
        return self.flow.deps[0]

    @property
    def free_users(self) -> list[int]:
        if self.releasing:
            return sorted(self.flow.users)
        return sorted(self.flow.users[self.fixed_prefix:])


def new_state(
    profile: TimeProfile,
    config: GameConfig,
    seed: int | None = 0,
    params: DynamicsParams | None = None,
) -> DynamicsState:
    params = params or DynamicsParams()
    profile.check_range(config)
    H = config.horizon_ticks
    state = DynamicsState(
        flow=FlowState(profile, config),
        rng=random.Random(seed),
        lower_bound=-H if params.lower_bound is None else params.lower_bound,
        upper_bound=H if params.upper_bound is None else params.upper_bound,
    )
    if state.lower_bound >= state.upper_bound:
        raise ValueError("lower bound must be below upper bound")
    if reference_compatible(state.first_departure, config):
        _start_fixation(state)
    else:
        state.releasing = True
    return state


def _start_fixation(state: DynamicsState) -> None:
    state.releasing = False
    state.reference_cost = state.flow.costs[0]
    state.fixed_prefix = 0
    state.stuck_counter = 0
    _extend_prefix(state)


def _extend_prefix(state: DynamicsState) -> int:
    """Fix every further leading user with cost C^r and minimum headway; returns how many."""
    flow = state.flow
    h = flow.h
    grown = 0
    n = state.fixed_prefix
    while n < len(flow):
        if flow.costs[n] != state.reference_cost:
            break
        if n > 0 and flow.arrs[n] - flow.arrs[n - 1] != h:
            break
        n += 1
        grown += 1
    state.fixed_prefix = n
    return grown


def reference_compatible(first_tick: int, config: GameConfig) -> bool:
    """Whether every reference tick s^r exists on the grid when the first user departs here.

    Late reference ticks differ from the first departure by (beta + gamma) * s1
    plus grid multiples, so that product must itself be a whole number of ticks.
    """
    return ((config.beta + config.gamma) * first_tick).denominator == 1


def reference_departure_time(state_or_flow: DynamicsState | FlowState, n: int, reference_cost: int) -> int | None:
    """Tick at which the (n+1)-th user would experience exactly C^r, queued behind user n.

    s^r = d_n + m/mu + V(d_n + m/mu) - C^r; None when V(d_n + m/mu) > C^r or
    when that time is off the grid.
    """
    flow = state_or_flow.flow if isinstance(state_or_flow, DynamicsState) else state_or_flow
    if n < 1 or n > len(flow):
        return None
    config = flow.config
    target = flow.arrs[n - 1] + flow.h
    slack = reference_cost - config.schedule_units(target)
    if slack < 0:
        return None
    q, r = divmod(slack, config.cost_scale)
    if r:
        return None
    return target - q


def rmse(profile: TimeProfile | FlowState, config: GameConfig) -> float:
    """Root mean squared deviation of trip costs from rho; exact inside, float out."""
    flow = profile if isinstance(profile, FlowState) else FlowState(profile, config)
    total = sum((Fraction(c) - config.cost_to_units(config.rho)) ** 2 for c in flow.costs)
    if total == 0:
        return 0.0
    return float(config.cost_unit) * math.sqrt(total / len(flow))


def special_initial_profile(config: GameConfig, rng: random.Random) -> TimeProfile:
    """User 1 departs at t_minus; the others take distinct uniform ticks in (t_minus, S]."""
    tm = config.to_tick(config.t_minus)
    rest = rng.sample(range(tm + 1, config.horizon_ticks + 1), config.num_users - 1)
    return TimeProfile((tm, *rest))


def uniform_initial_profile(config: GameConfig, rng: random.Random) -> TimeProfile:
    """Distinct uniform ticks over the whole window [-S, S]."""
    H = config.horizon_ticks
    return TimeProfile(tuple(rng.sample(range(-H, H + 1), config.num_users)))


def naive_step(state: DynamicsState) -> str:
    flow = state.flow
    user = flow.users[state.rng.randrange(len(flow))]
    tick = sample_better_response(flow, user, state.rng, max_candidates=1)
    state.day += 1
    if tick is None:
        return NO_MOVE
    flow.move(user, tick)
    return MOVE


def classify_eventual_profile(state: DynamicsState) -> str:
    flow = state.flow
    n = state.fixed_prefix
    cr = state.reference_cost
    rest = flow.costs[n:]
    above = any(c > cr for c in rest)
    below = any(c < cr for c in rest)
    terminal_queue = flow.arrs[-1] > flow.deps[-1]
    if above and below:
        return ANOMALY
    if above:
        return ABOVE
    if below:
        return BELOW
    if terminal_queue:
        return TERMINAL_QUEUE
    if n == len(flow):
        return CONVERGED
    return ANOMALY


def adjust_bounds_and_release(state: DynamicsState, classification: str, params: DynamicsParams | None = None) -> None:
    """Step 4: costs above C^r mean the first departure is late, below (or a
    queued last user) mean it is early; that departure becomes the new bound."""
    if classification in (CONVERGED, ANOMALY):
        raise ValueError(f"cannot adjust bounds for classification {classification!r}")
    s1 = state.first_departure
    if classification == ABOVE:
        state.upper_bound = s1
    else:
        state.lower_bound = s1
    state.bound_updates += 1
    state.releasing = True
    state.fixed_prefix = 0
    state.stuck_counter = 0
    if params is None or params.check_invariants:
        t_minus = state.config.to_tick(state.config.t_minus)
        if not state.lower_bound <= t_minus <= state.upper_bound:
            raise DynamicsInvariantError(
                f"day {state.day}: bounds [{state.lower_bound}, {state.upper_bound}] lost t_minus tick "
                f"{t_minus} after {classification} diagnosis with s1 tick {s1}"
            )


def fixation_step(state: DynamicsState, params: DynamicsParams) -> str:
    flow = state.flow
    P = len(flow)
    state.day += 1

    if state.releasing:
        user = flow.users[state.rng.randrange(P)]
        tick = sample_better_response(flow, user, state.rng, params.max_candidates)
        if tick is None:
            return NO_MOVE
        flow.move(user, tick)
        s1 = flow.deps[0]
        if state.lower_bound < s1 < state.upper_bound and reference_compatible(s1, state.config):
            _start_fixation(state)
            return FIX
        return RELEASE

    n = state.fixed_prefix
    if n == P or state.stuck_counter >= params.stuck_threshold:
        verdict = classify_eventual_profile(state)
        if verdict == CONVERGED:
            return NO_MOVE
        if verdict == ANOMALY:
            state.anomalies += 1
            state.stuck_counter = 0
            log.info("day %d: mixed costs around C^r with prefix %d; continuing", state.day, n)
            return NO_MOVE
        adjust_bounds_and_release(state, verdict, params)
        return BOUND_UPDATE

    if params.check_invariants:
        prefix_before = (flow.deps[:n], flow.costs[:n])
    user = flow.users[n + state.rng.randrange(P - n)]
    reference = reference_departure_time(flow, n, state.reference_cost)
    tick = sample_better_response(
        flow,
        user,
        state.rng,
        params.max_candidates,
        restriction=flow.deps[n - 1] + 1,
        reference=reference,
    )
    event = NO_MOVE
    if tick is not None:
        flow.move(user, tick)
        event = MOVE
    if _extend_prefix(state):
        state.stuck_counter = 0
        event = FIX
    else:
        state.stuck_counter += 1
    if params.check_invariants and (flow.deps[:n], flow.costs[:n]) != prefix_before:
        raise DynamicsInvariantError(f"day {state.day}: fixed prefix changed")
    return event


@dataclass
class DayRecord:
    day: int
    rmse: float
    sq_units: int  # exact sum of squared cost deviations from rho, in cost units squared
    first_departure: int
    fixed_prefix: int
    event: str
    lower_bound: int
    upper_bound: int


@dataclass
class Trajectory:
    kind: str
    seed: int | None
    converged: bool = False
    days: int = 0
    records: list[DayRecord] = field(default_factory=list)
    bound_history: list[DayRecord] = field(default_factory=list)
    snapshots: dict[int, TimeProfile] = field(default_factory=dict)
    final_profile: TimeProfile | None = None
    bound_updates: int = 0
    anomalies: int = 0
    moves: int = 0


def run(
    config: GameConfig,
    initial: TimeProfile,
    kind: str = FIXATION,
    seed: int | None = 0,
    max_days: int = 100_000,
    stop_on_zero: bool = True,
    params: DynamicsParams | None = None,
    snapshot_days: frozenset[int] | set[int] = frozenset(),
    sink: Callable[[DayRecord], None] | None = None,
    keep_records: bool = True,
) -> Trajectory:
    """Iterate the chosen dynamics from ``initial``; day 1 is the initial profile."""
    if kind not in (NAIVE, FIXATION):
        raise ValueError(f"unknown dynamics kind {kind!r}")
    params = params or DynamicsParams()
    state = new_state(initial, config, seed, params)
    traj = Trajectory(kind=kind, seed=seed)
    rho_u = config.cost_to_units(config.rho)
    P = config.num_users
    unit = float(config.cost_unit)

    def record(event: str) -> bool:
        total = sum((c - rho_u) ** 2 for c in state.flow.costs)
        value = 0.0 if total == 0 else unit * math.sqrt(total / P)
        rec = DayRecord(
            day=state.day,
            rmse=value,
            sq_units=total,
            first_departure=state.flow.deps[0],
            fixed_prefix=state.fixed_prefix if kind == FIXATION else 0,
            event=event,
            lower_bound=state.lower_bound,
            upper_bound=state.upper_bound,
        )
        if keep_records:
            traj.records.append(rec)
        if event == BOUND_UPDATE:
            traj.bound_history.append(rec)
        if sink is not None:
            sink(rec)
        if state.day in snapshot_days:
            traj.snapshots[state.day] = state.profile
        return total == 0

    zero = record(INIT)
    while not (zero and stop_on_zero) and state.day < max_days:
        if kind == NAIVE:
            event = naive_step(state)
        else:
            event = fixation_step(state, params)
        if event in (MOVE, FIX, RELEASE):
            traj.moves += 1
        zero = record(event)
    traj.converged = zero
    traj.days = state.day
    traj.final_profile = state.profile
    traj.bound_updates = state.bound_updates
    traj.anomalies = state.anomalies
    return traj
