"""Forecasted cost of an unoccupied departure tick and the better-response set.

A forecast is kept internally as an exact rational ``(num, den)`` in cost
units with ``den > 0``; a user with current cost ``c`` (cost units) strictly
improves at that tick iff ``c * den > num``.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .core_model import FlowState, GameConfig, ProfileError, TimeProfile, TripOutcome, compute_arrivals

CONGESTED = "congested-interpolation"
FREE_FLOW = "free-flow-schedule"
OUTSIDE = "outside-rush"


def _arrays(view: TripOutcome | FlowState) -> tuple[Sequence[int], Sequence[int], Sequence[int]]:
    if isinstance(view, FlowState):
        return view.deps, view.arrs, view.costs
    return view.departures, view.arrivals, view.cost_units


def _as_view(obj: TimeProfile | TripOutcome | FlowState, config: GameConfig) -> TripOutcome | FlowState:
    if isinstance(obj, TimeProfile):
        return compute_arrivals(obj, config)
    return obj


def _interp(ca: int, sa: int, cb: int, sb: int, s: int) -> tuple[int, int]:
    den = sb - sa
    return ca * den + (cb - ca) * (s - sa), den


def forecast_units(view: TripOutcome | FlowState, tick: int, config: GameConfig) -> tuple[int, int]:
    """Forecast at an unoccupied tick as ``(num, den)`` in cost units."""
    deps, arrs, costs = _arrays(view)
    h = config.headway_ticks
    k = bisect.bisect_left(deps, tick)
    if k < len(deps) and deps[k] == tick:
        raise ProfileError(f"tick {tick} is occupied; no forecast is defined there")
    if k == 0 or tick >= arrs[-1]:
        return config.schedule_units(tick), 1
    a = k - 1  # last departure before tick
    if a + 1 < len(deps) and arrs[a + 1] - arrs[a] == h:
        return _interp(costs[a], deps[a], costs[a + 1], deps[a + 1], tick)
    if tick <= arrs[a]:
        return _interp(costs[a], deps[a], config.schedule_units(arrs[a]), arrs[a], tick)
    return config.schedule_units(tick), 1


def forecasted_cost(profile: TimeProfile | TripOutcome | FlowState, tick: int, config: GameConfig) -> Fraction:
    H = config.horizon_ticks
    if not -H <= tick <= H:
        raise ProfileError(f"tick {tick} outside the departure window")
    num, den = forecast_units(_as_view(profile, config), tick, config)
    return config.cost_from_units(Fraction(num, den))


@dataclass(frozen=True)
class ForecastSegment:
    """Maximal run of unoccupied ticks ``first..last`` sharing one forecast formula."""

    first: int
    last: int
    kind: str
    endpoints: tuple[tuple[int, int], tuple[int, int]] | None = None  # ((s_a, C_a), (s_b, C_b)) in ticks/cost units

    def units_at(self, tick: int, config: GameConfig) -> tuple[int, int]:
        if self.kind == CONGESTED:
            (sa, ca), (sb, cb) = self.endpoints
            return _interp(ca, sa, cb, sb, tick)
        return config.schedule_units(tick), 1

    def ticks(self) -> range:
        return range(self.first, self.last + 1)

    def min_units(self, config: GameConfig) -> tuple[int, int]:
        """Smallest forecast on the segment; linear pieces peak/trough only at ends or tick 0."""
        cands = [self.first, self.last]
        if self.kind != CONGESTED and self.first < 0 < self.last:
            cands.append(0)
        return min((self.units_at(t, config) for t in cands), key=lambda f: Fraction(*f))


def forecast_segments(profile: TimeProfile | TripOutcome | FlowState, config: GameConfig) -> list[ForecastSegment]:
    """Partition of the unoccupied ticks of the window by forecast formula."""
    view = _as_view(profile, config)
    deps, arrs, costs = _arrays(view)
    H = config.horizon_ticks
    h = config.headway_ticks
    segs: list[ForecastSegment] = []

    def add(lo: int, hi: int, kind: str, ends=None) -> None:
        lo, hi = max(lo, -H), min(hi, H)
        if lo <= hi:
            segs.append(ForecastSegment(lo, hi, kind, ends))

    add(-H, deps[0] - 1, OUTSIDE)
    n = len(deps)
    for a in range(n):
        sa, da, ca = deps[a], arrs[a], costs[a]
        if a + 1 < n:
            sb = deps[a + 1]
            if arrs[a + 1] - da == h:
                add(sa + 1, sb - 1, CONGESTED, ((sa, ca), (sb, costs[a + 1])))
            else:
                add(sa + 1, da, CONGESTED, ((sa, ca), (da, config.schedule_units(da))))
                add(da + 1, sb - 1, FREE_FLOW)
        else:
            add(sa + 1, da - 1, CONGESTED, ((sa, ca), (da, config.schedule_units(da))))
            add(max(da, sa + 1), H, OUTSIDE)
    return segs


def better_response_set(
    profile: TimeProfile | TripOutcome | FlowState,
    user: int,
    config: GameConfig,
    restriction: int | None = None,
) -> set[int]:
    """Unoccupied ticks (>= restriction if given) whose forecast is strictly below the user's cost."""
    view = _as_view(profile, config)
    current = _cost_of(view, user)
    out: set[int] = set()
    for seg in forecast_segments(view, config):
        for t in seg.ticks():
            if restriction is not None and t < restriction:
                continue
            num, den = seg.units_at(t, config)
            if current * den > num:
                out.add(t)
    return out


def _cost_of(view: TripOutcome | FlowState, user: int) -> int:
    if isinstance(view, FlowState):
        return view.cost_of(user)
    return view.cost_units[view.rank_of[user]]


def min_forecast_units(profile: TimeProfile | TripOutcome | FlowState, config: GameConfig) -> Fraction | None:
    segs = forecast_segments(profile, config)
    if not segs:
        return None
    return min(Fraction(*s.min_units(config)) for s in segs)


def is_stationary(profile: TimeProfile | TripOutcome | FlowState, config: GameConfig) -> bool:
    """True iff no user has a strictly improving forecast anywhere on the grid.

    The forecast does not depend on who asks, so this reduces to comparing the
    highest current cost with the lowest forecast over all free ticks.
    """
    view = _as_view(profile, config)
    lowest = min_forecast_units(view, config)
    if lowest is None:
        return True
    _, _, costs = _arrays(view)
    return max(costs) <= lowest


def iter_free_ticks(deps: Sequence[int], lo: int, hi: int) -> Iterator[int]:
    i = bisect.bisect_left(deps, lo)
    t = lo
    while t <= hi:
        if i < len(deps) and deps[i] == t:
            i += 1
        else:
            yield t
        t += 1


def draw_free_tick(deps: Sequence[int], lo: int, hi: int, rng: random.Random) -> int | None:
    """Uniform draw among unoccupied ticks of ``[lo, hi]``; None when there are none."""
    if lo > hi:
        return None
    i0 = bisect.bisect_left(deps, lo)
    i1 = bisect.bisect_right(deps, hi)
    free = (hi - lo + 1) - (i1 - i0)
    if free <= 0:
        return None
    t = lo + rng.randrange(free)
    for o in deps[i0:i1]:
        if o <= t:
            t += 1
        else:
            break
    return t


def sample_better_response(
    state: FlowState,
    user: int,
    rng: random.Random,
    max_candidates: int = 100,
    restriction: int | None = None,
    reference: int | None = None,
) -> int | None:
    """Reference tick first, then up to ``max_candidates`` uniform free ticks; first strict gain wins."""
    if max_candidates < 1:
        raise ValueError("max_candidates must be at least 1")
    config = state.config
    H = config.horizon_ticks
    lo = -H if restriction is None else max(restriction, -H)
    current = state.cost_of(user)
    if reference is not None and lo <= reference <= H and not state.occupied(reference):
        num, den = forecast_units(state, reference, config)
        if current * den > num:
            return reference
    for _ in range(max_candidates):
        t = draw_free_tick(state.deps, lo, H, rng)
        if t is None:
            return None
        num, den = forecast_units(state, t, config)
        if current * den > num:
            return t
    return None
