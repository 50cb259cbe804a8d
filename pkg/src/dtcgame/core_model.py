"""Exact bottleneck model: game constants, the departure grid and arrival physics.

Times are stored as signed integer ticks (multiples of ``grid_step``).  Costs
are stored internally as integers in *cost units* of ``grid_step / L`` where
``L`` is the least common denominator of the two schedule-delay slopes; every
trip cost and every schedule delay is an exact integer in those units.  The
public API hands out :class:`fractions.Fraction` values.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

Number = int | Fraction | str


class DTCError(Exception):
    """Base class for model errors."""


class GridError(DTCError):
    """The time grid cannot represent the equilibrium exactly."""


class ProfileError(DTCError):
    """A time profile violates the strategy rules of the game."""


def as_fraction(value: Number | float) -> Fraction:
    """Exact conversion; floats go through their shortest repr so 0.01 -> 1/100."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True)
class GameConfig:
    num_users: int
    user_size: Fraction = Fraction(1)
    capacity: Fraction = Fraction(1)
    beta: Fraction = Fraction(1, 2)
    gamma: Fraction = Fraction(2)
    grid_step: Fraction = Fraction(1, 100)
    horizon: Fraction = Fraction(100)

    def __post_init__(self) -> None:
        for name in ("user_size", "capacity", "beta", "gamma", "grid_step", "horizon"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        if int(self.num_users) != self.num_users or self.num_users < 1:
            raise ValueError(f"num_users must be a positive integer, got {self.num_users!r}")
        object.__setattr__(self, "num_users", int(self.num_users))
        if not 0 < self.user_size <= 1:
            raise ValueError("user_size must lie in (0, 1]")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if (self.horizon / self.grid_step).denominator != 1:
            raise GridError(f"horizon {self.horizon} is not a multiple of grid_step {self.grid_step}")
        if not (-self.horizon < self.t_minus and self.t_plus < self.horizon) and self.num_users > 1:
            raise GridError(
                f"rush hour [{self.t_minus}, {self.t_plus}] is not strictly inside "
                f"[-{self.horizon}, {self.horizon}]"
            )

    # -- derived constants -------------------------------------------------
    @property
    def headway(self) -> Fraction:
        """Minimum arrival spacing m/mu."""
        return self.user_size / self.capacity

    @property
    def rush_length(self) -> Fraction:
        return self.headway * (self.num_users - 1)

    @property
    def t_minus(self) -> Fraction:
        return -self.rush_length * self.gamma / (self.beta + self.gamma)

    @property
    def t_plus(self) -> Fraction:
        return self.t_minus + self.rush_length

    @property
    def rho(self) -> Fraction:
        return self.rush_length * self.beta * self.gamma / (self.beta + self.gamma)

    @property
    def epsilon(self) -> Fraction:
        return self.headway * (1 + self.gamma)

    @property
    def critical_order(self) -> int:
        return math.floor(self.gamma * (self.num_users - 1) / (self.beta + self.gamma)) + 1

    # -- grid arithmetic ----------------------------------------------------
    @property
    def horizon_ticks(self) -> int:
        return int(self.horizon / self.grid_step)

    @property
    def num_ticks(self) -> int:
        return 2 * self.horizon_ticks + 1

    @cached_property
    def headway_ticks(self) -> int:
        ratio = self.headway / self.grid_step
        if ratio.denominator != 1:
            raise GridError(f"m/mu = {self.headway} is not a multiple of grid_step {self.grid_step}")
        return int(ratio)

    @cached_property
    def cost_scale(self) -> int:
        """L: cost units per grid step of time."""
        return math.lcm(self.beta.denominator, self.gamma.denominator)

    @cached_property
    def beta_units(self) -> int:
        return int(self.beta * self.cost_scale)

    @cached_property
    def gamma_units(self) -> int:
        return int(self.gamma * self.cost_scale)

    @property
    def cost_unit(self) -> Fraction:
        return self.grid_step / self.cost_scale

    def to_tick(self, time: Number | float) -> int:
        ratio = as_fraction(time) / self.grid_step
        if ratio.denominator != 1:
            raise GridError(f"time {time} is not a multiple of grid_step {self.grid_step}")
        return int(ratio)

    def to_time(self, tick: int) -> Fraction:
        return tick * self.grid_step

    def cost_from_units(self, units: int | Fraction) -> Fraction:
        return Fraction(units) * self.cost_unit

    def cost_to_units(self, cost: Number) -> Fraction:
        return as_fraction(cost) / self.cost_unit

    def schedule_units(self, tick: int) -> int:
        if tick < 0:
            return -self.beta_units * tick
        return self.gamma_units * tick

    def with_changes(self, **changes) -> "GameConfig":
        values = {
            "num_users": self.num_users,
            "user_size": self.user_size,
            "capacity": self.capacity,
            "beta": self.beta,
            "gamma": self.gamma,
            "grid_step": self.grid_step,
            "horizon": self.horizon,
        }
        values.update(changes)
        return GameConfig(**values)


def validate_grid(config: GameConfig) -> list[str]:
    """Return the admissibility conditions that ``grid_step`` violates (empty = ok).

    Each of rho/beta, m(1-beta)/mu, m(1+gamma)/mu, (beta+gamma)*rho/beta and m/mu
    must be an integer multiple of the grid step.
    """
    m_mu = config.headway
    checks = [
        ("rho/beta (= -t_minus)", config.rho / config.beta),
        ("m(1-beta)/mu (early departure spacing)", m_mu * (1 - config.beta)),
        ("m(1+gamma)/mu (late departure spacing)", m_mu * (1 + config.gamma)),
        ("(beta+gamma)*rho/beta (straddling gap term)", (config.beta + config.gamma) * config.rho / config.beta),
        ("m/mu (arrival headway)", m_mu),
    ]
    violations = []
    for label, value in checks:
        ratio = value / config.grid_step
        if ratio.denominator != 1:
            violations.append(f"{label} = {value} is not a multiple of grid_step {config.grid_step}")
    return violations


def require_admissible(config: GameConfig) -> None:
    violations = validate_grid(config)
    if violations:
        raise GridError("; ".join(violations))


def schedule_delay(arrival: Number | float, config: GameConfig) -> Fraction:
    """V(d) = beta*max(-d, 0) + gamma*max(d, 0), desired arrival at 0."""
    d = as_fraction(arrival)
    return config.beta * max(-d, Fraction(0)) + config.gamma * max(d, Fraction(0))


@dataclass(frozen=True)
class TimeProfile:
    """Departure tick of each user; ``departures[p - 1]`` belongs to user ``p``."""

    departures: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "departures", tuple(int(t) for t in self.departures))
        seen: dict[int, int] = {}
        for user, tick in enumerate(self.departures, start=1):
            if tick in seen:
                raise ProfileError(f"users {seen[tick]} and {user} share departure tick {tick}")
            seen[tick] = user

    @property
    def num_users(self) -> int:
        return len(self.departures)

    def tick_of(self, user: int) -> int:
        return self.departures[user - 1]

    def users_in_order(self) -> list[int]:
        return sorted(range(1, self.num_users + 1), key=self.tick_of)

    def orders(self) -> dict[int, int]:
        return {user: rank for rank, user in enumerate(self.users_in_order(), start=1)}

    def sorted_ticks(self) -> list[int]:
        return sorted(self.departures)

    def moved(self, user: int, tick: int) -> "TimeProfile":
        deps = list(self.departures)
        deps[user - 1] = tick
        return TimeProfile(tuple(deps))

    def check_range(self, config: GameConfig) -> None:
        if self.num_users != config.num_users:
            raise ProfileError(f"profile has {self.num_users} users, config expects {config.num_users}")
        h = config.horizon_ticks
        for user, tick in enumerate(self.departures, start=1):
            if not -h <= tick <= h:
                raise ProfileError(f"user {user} departs at tick {tick}, outside [-{h}, {h}]")


def profile_from_departures(
    pairs: Iterable[tuple[int, Number | float]], config: GameConfig
) -> TimeProfile:
    """Build a profile from ``(user, time)`` pairs, times in model time units."""
    by_user: dict[int, int] = {}
    owner: dict[int, int] = {}
    for user, time in pairs:
        user = int(user)
        value = as_fraction(time)
        ratio = value / config.grid_step
        if ratio.denominator != 1:
            lo = math.floor(ratio)
            raise ProfileError(
                f"user {user}: time {time} is off the grid; nearest ticks are "
                f"{config.to_time(lo)} and {config.to_time(lo + 1)}"
            )
        tick = int(ratio)
        if user in by_user:
            raise ProfileError(f"user {user} listed twice")
        if tick in owner:
            raise ProfileError(f"users {owner[tick]} and {user} both depart at {value}")
        by_user[user] = tick
        owner[tick] = user
    expected = set(range(1, config.num_users + 1))
    if set(by_user) != expected:
        missing = sorted(expected - set(by_user))
        extra = sorted(set(by_user) - expected)
        raise ProfileError(f"user ids must be 1..{config.num_users}; missing {missing}, unexpected {extra}")
    profile = TimeProfile(tuple(by_user[p] for p in range(1, config.num_users + 1)))
    profile.check_range(config)
    return profile


def arrival_ticks(sorted_deps: Sequence[int], headway_ticks: int) -> list[int]:
    """Point-queue recursion d_k = max(d_{k-1} + m/mu, s_k); the first user free-flows."""
    arrs: list[int] = []
    prev = None
    for s in sorted_deps:
        prev = s if prev is None else max(prev + headway_ticks, s)
        arrs.append(prev)
    return arrs


@dataclass(frozen=True)
class TripOutcome:
    """Per-user result of a profile, indexed by departure order (0-based lists)."""

    config: GameConfig
    users: tuple[int, ...]
    departures: tuple[int, ...]
    arrivals: tuple[int, ...]
    cost_units: tuple[int, ...]
    rank_of: dict[int, int] = field(repr=False, compare=False)

    @classmethod
    def build(cls, config: GameConfig, users: Sequence[int], deps: Sequence[int], arrs: Sequence[int]) -> "TripOutcome":
        scale = config.cost_scale
        costs = tuple(scale * (d - s) + config.schedule_units(d) for s, d in zip(deps, arrs))
        return cls(
            config=config,
            users=tuple(users),
            departures=tuple(deps),
            arrivals=tuple(arrs),
            cost_units=costs,
            rank_of={u: k for k, u in enumerate(users)},
        )

    def __len__(self) -> int:
        return len(self.users)

    def order(self, user: int) -> int:
        return self.rank_of[user] + 1

    def arrival(self, user: int) -> Fraction:
        return self.config.to_time(self.arrivals[self.rank_of[user]])

    def queue_delay(self, user: int) -> Fraction:
        k = self.rank_of[user]
        return self.config.to_time(self.arrivals[k] - self.departures[k])

    def schedule_delay(self, user: int) -> Fraction:
        return self.config.cost_from_units(self.config.schedule_units(self.arrivals[self.rank_of[user]]))

    def trip_cost(self, user: int) -> Fraction:
        return self.config.cost_from_units(self.cost_units[self.rank_of[user]])

    def trip_costs(self) -> dict[int, Fraction]:
        return {u: self.config.cost_from_units(c) for u, c in zip(self.users, self.cost_units)}

    def rows(self) -> list[dict]:
        """One dict per user in user-id order, all values exact."""
        cfg = self.config
        out = []
        for user in sorted(self.users):
            k = self.rank_of[user]
            out.append(
                {
                    "user": user,
                    "order": k + 1,
                    "departure": cfg.to_time(self.departures[k]),
                    "arrival": cfg.to_time(self.arrivals[k]),
                    "queue_delay": cfg.to_time(self.arrivals[k] - self.departures[k]),
                    "schedule_delay": cfg.cost_from_units(cfg.schedule_units(self.arrivals[k])),
                    "trip_cost": cfg.cost_from_units(self.cost_units[k]),
                }
            )
        return out


def compute_arrivals(profile: TimeProfile, config: GameConfig) -> TripOutcome:
    users = profile.users_in_order()
    deps = [profile.tick_of(u) for u in users]
    arrs = arrival_ticks(deps, config.headway_ticks)
    return TripOutcome.build(config, users, deps, arrs)


class FlowState:
    """Mutable sorted view of a profile, updated incrementally after single moves.

    Only users at or after the first affected departure rank are recomputed,
    which is exactly the FIFO causality of the point queue.
    """

    def __init__(self, profile: TimeProfile, config: GameConfig):
        self.config = config
        self.h = config.headway_ticks
        self.scale = config.cost_scale
        self.users = profile.users_in_order()
        self.deps = [profile.tick_of(u) for u in self.users]
        self.arrs = arrival_ticks(self.deps, self.h)
        self.costs = [self._cost(s, d) for s, d in zip(self.deps, self.arrs)]
        self.tick_of = {u: profile.tick_of(u) for u in self.users}

    def _cost(self, s: int, d: int) -> int:
        return self.scale * (d - s) + self.config.schedule_units(d)

    def __len__(self) -> int:
        return len(self.users)

    def rank(self, user: int) -> int:
        return bisect.bisect_left(self.deps, self.tick_of[user])

    def occupied(self, tick: int) -> bool:
        i = bisect.bisect_left(self.deps, tick)
        return i < len(self.deps) and self.deps[i] == tick

    def cost_of(self, user: int) -> int:
        return self.costs[self.rank(user)]

    def move(self, user: int, tick: int) -> None:
        if self.occupied(tick):
            raise ProfileError(f"tick {tick} is occupied")
        i = self.rank(user)
        del self.users[i]
        del self.deps[i]
        del self.arrs[i]
        del self.costs[i]
        j = bisect.bisect_left(self.deps, tick)
        self.users.insert(j, user)
        self.deps.insert(j, tick)
        self.arrs.insert(j, 0)
        self.costs.insert(j, 0)
        self.tick_of[user] = tick
        start = min(i, j)
        prev = self.arrs[start - 1] if start > 0 else None
        for k in range(start, len(self.deps)):
            s = self.deps[k]
            d = s if prev is None else max(prev + self.h, s)
            self.arrs[k] = d
            self.costs[k] = self._cost(s, d)
            prev = d

    def profile(self) -> TimeProfile:
        return TimeProfile(tuple(self.tick_of[p] for p in range(1, len(self.users) + 1)))

    def outcome(self) -> TripOutcome:
        return TripOutcome.build(self.config, self.users, self.deps, self.arrs)
