"""Closed-form epsilon-Nash profile, exhaustive deviation scans and fluid-model values."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core_model import (
    GameConfig,
    GridError,
    TimeProfile,
    arrival_ticks,
    compute_arrivals,
    require_admissible,
)


@dataclass(frozen=True)
class EquilibriumSolution:
    config: GameConfig
    first_departure: Fraction
    last_departure: Fraction
    equilibrium_cost: Fraction
    epsilon: Fraction
    critical_order: int
    departure_ticks: tuple[int, ...]  # by rank 1..P

    @property
    def departures(self) -> list[Fraction]:
        return [self.config.to_time(t) for t in self.departure_ticks]

    def profile(self) -> TimeProfile:
        """User p takes rank p."""
        return TimeProfile(self.departure_ticks)


def equilibrium_solution(config: GameConfig) -> EquilibriumSolution:
    require_admissible(config)
    P = config.num_users
    m_mu = config.headway
    t_minus = config.t_minus
    o_cr = config.critical_order
    early = m_mu * (1 - config.beta)
    late = m_mu * (1 + config.gamma)
    offset = m_mu * config.gamma * (P - 1)
    ticks = []
    for rank in range(1, P + 1):
        if rank <= o_cr:
            s = t_minus + early * (rank - 1)
        else:
            s = t_minus + late * (rank - 1) - offset
        ticks.append(config.to_tick(s))
    if any(b <= a for a, b in zip(ticks, ticks[1:])):
        raise GridError("equilibrium departures are not strictly increasing")
    return EquilibriumSolution(
        config=config,
        first_departure=t_minus,
        last_departure=config.t_plus,
        equilibrium_cost=config.rho,
        epsilon=config.epsilon,
        critical_order=o_cr,
        departure_ticks=tuple(ticks),
    )


# ---------------------------------------------------------------------------
# Deviation scan.
#
# For a deviating user p we drop p, compute the remaining users' arrivals, and
# insert p at every free tick s: its predecessor is the last remaining user with
# departure < s, whose arrival does not depend on p (FIFO causality).  So
# d'(s) = max(d_pred + m/mu, s) and the realised cost follows in O(1) per tick.
# ---------------------------------------------------------------------------


def deviation_costs(profile: TimeProfile, user: int, config: GameConfig) -> tuple[np.ndarray, np.ndarray]:
    """Realised cost (cost units) of ``user`` at every unoccupied grid tick.

    Returns ``(ticks, costs)`` as int64 arrays.
    """
    H = config.horizon_ticks
    h = config.headway_ticks
    others = sorted(t for u, t in enumerate(profile.departures, start=1) if u != user)
    other_arrs = np.asarray(arrival_ticks(others, h), dtype=np.int64)
    others_arr = np.asarray(others, dtype=np.int64)
    grid = np.arange(-H, H + 1, dtype=np.int64)
    free = np.ones(grid.size, dtype=bool)
    free[np.asarray(profile.departures, dtype=np.int64) + H] = False
    ticks = grid[free]
    pred = np.searchsorted(others_arr, ticks, side="left") - 1
    arr = ticks.copy()
    has_pred = pred >= 0
    if others:
        arr[has_pred] = np.maximum(other_arrs[pred[has_pred]] + h, ticks[has_pred])
    sched = np.where(arr < 0, -config.beta_units * arr, config.gamma_units * arr)
    costs = config.cost_scale * (arr - ticks) + sched
    return ticks, costs


@dataclass(frozen=True)
class Deviation:
    user: int
    tick: int
    improvement: Fraction

    def time(self, config: GameConfig) -> Fraction:
        return config.to_time(self.tick)


@dataclass(frozen=True)
class NashVerdict:
    holds: bool
    epsilon: Fraction
    worst: Deviation | None  # largest improvement found, present whenever any user can improve

    @property
    def violation(self) -> Deviation | None:
        return None if self.holds else self.worst


def max_unilateral_improvement(profile: TimeProfile, config: GameConfig) -> Deviation | None:
    """Largest C_p(s) - C_p(s', s_-p) over users and free ticks; None if nobody can gain."""
    outcome = compute_arrivals(profile, config)
    best_units = 0
    best: tuple[int, int] | None = None
    for user in range(1, config.num_users + 1):
        current = outcome.cost_units[outcome.rank_of[user]]
        ticks, costs = deviation_costs(profile, user, config)
        if ticks.size == 0:
            continue
        i = int(np.argmin(costs))
        gain = current - int(costs[i])
        if gain > best_units:
            best_units, best = gain, (user, int(ticks[i]))
    if best is None:
        return None
    return Deviation(best[0], best[1], config.cost_from_units(best_units))


def verify_epsilon_nash(profile: TimeProfile, epsilon: Fraction | int | str, config: GameConfig) -> NashVerdict:
    """Exhaustive check of C_p(s*) <= C_p(s, s*_-p) + epsilon over every free grid tick."""
    eps = Fraction(epsilon)
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    worst = max_unilateral_improvement(profile, config)
    holds = worst is None or worst.improvement <= eps
    return NashVerdict(holds=holds, epsilon=eps, worst=worst)


@dataclass(frozen=True)
class FluidCorrespondence:
    total_mass: Fraction
    fluid_cost: Fraction
    fluid_first_departure: Fraction
    early_rate: Fraction
    late_rate: Fraction


def fluid_correspondence(config: GameConfig) -> FluidCorrespondence:
    Q = config.user_size * (config.num_users - 1)
    mu, beta, gamma = config.capacity, config.beta, config.gamma
    fluid = FluidCorrespondence(
        total_mass=Q,
        fluid_cost=(Q / mu) * beta * gamma / (beta + gamma),
        fluid_first_departure=-(Q / mu) * gamma / (beta + gamma),
        early_rate=mu / (1 - beta),
        late_rate=mu / (1 + gamma),
    )
    if fluid.fluid_cost != config.rho or fluid.fluid_first_departure != config.t_minus:
        raise AssertionError("fluid equilibrium disagrees with the atomic closed form")
    return fluid
