"""Brute-force oracles and constructive convergence paths.

``brute_force_arrivals`` re-derives arrivals from the closed max-plus form
``d_k = max_{j <= k} (s_j + (k - j) m/mu)``, independent of the recursion used
by :func:`dtcgame.core_model.compute_arrivals`.

``build_ordered_path`` writes down, step by step, a better-response path from
any profile to the closed-form equilibrium: first the earliest departure is
walked onto t_minus, then users are pinned to their equilibrium ticks from the
earliest one on.  Every step is checked to be a strict forecast improvement.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .core_model import DTCError, FlowState, GameConfig, TimeProfile, TripOutcome
from .equilibrium import equilibrium_solution
from .forecast import CONGESTED, better_response_set, forecast_segments, forecast_units

log = logging.getLogger(__name__)


class PathConstructionError(DTCError):
    """A step of the constructive path failed validation."""


class BudgetExceeded(DTCError):
    def __init__(self, nodes: int, budget: int):
        super().__init__(f"profile graph would have {nodes} nodes, budget is {budget}")
        self.nodes = nodes
        self.budget = budget


def brute_force_arrivals(profile: TimeProfile, config: GameConfig) -> TripOutcome:
    h = config.headway_ticks
    users = sorted(range(1, profile.num_users + 1), key=profile.tick_of)
    deps = [profile.tick_of(u) for u in users]
    arrs = []
    for k in range(len(deps)):
        arrs.append(max(deps[j] + (k - j) * h for j in range(k + 1)))
    return TripOutcome.build(config, users, deps, arrs)


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathStep:
    step: int
    user: int
    from_tick: int
    to_tick: int
    cost_before: Fraction
    forecast: Fraction
    note: str = ""


@dataclass
class BetterResponsePath:
    start: TimeProfile
    end: TimeProfile
    steps: list[PathStep] = field(default_factory=list)
    substitutions: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


def _forecast_fraction(flow: FlowState, tick: int) -> Fraction:
    num, den = forecast_units(flow, tick, flow.config)
    return Fraction(num, den)


def _free_flow_ticks(flow: FlowState, lo: int, hi: int, after: int):
    """Unoccupied ticks in [lo, hi], later than ``after``, whose forecast is V itself."""
    for seg in forecast_segments(flow, flow.config):
        if seg.kind == CONGESTED:
            continue
        start = max(seg.first, lo, after + 1)
        for t in range(start, min(seg.last, hi) + 1):
            yield t


class _Builder:
    def __init__(self, config: GameConfig, initial: TimeProfile):
        self.config = config
        self.eq = list(equilibrium_solution(config).departure_ticks)
        self.t_minus = self.eq[0]
        self.t_plus = self.eq[-1]
        self.rho_units = config.cost_to_units(config.rho)
        self.flow = FlowState(initial, config)
        self.path = BetterResponsePath(start=initial, end=initial)

    def emit(self, user: int, tick: int, note: str) -> None:
        flow = self.flow
        cost = flow.cost_of(user)
        if flow.occupied(tick):
            raise PathConstructionError(f"step {len(self.path.steps) + 1} ({note}): target tick {tick} occupied")
        forecast = _forecast_fraction(flow, tick)
        if not cost > forecast:
            raise PathConstructionError(
                f"step {len(self.path.steps) + 1} ({note}): user {user} {flow.tick_of[user]} -> {tick} "
                f"forecast {forecast} is not below cost {cost} (cost units)"
            )
        unit = self.config.cost_unit
        self.path.steps.append(
            PathStep(
                step=len(self.path.steps) + 1,
                user=user,
                from_tick=flow.tick_of[user],
                to_tick=tick,
                cost_before=cost * unit,
                forecast=forecast * unit,
                note=note,
            )
        )
        flow.move(user, tick)

    def free_flow_target(self, after: int) -> int | None:
        """Earliest tick later than ``after`` forecast as V(t) <= rho (free-flow witness)."""
        for t in _free_flow_ticks(self.flow, self.t_minus, self.t_plus, after):
            return t
        return None

    def phase_a(self) -> None:
        flow = self.flow
        s1 = flow.deps[0]
        P = len(flow)
        if s1 > self.t_minus:
            self.emit(flow.users[-1], self.t_minus, "last user to t_minus")
            return
        first = flow.users[0]
        if flow.arrs[-1] == s1 + flow.h * (P - 1):
            self.emit(first, self.t_plus, "first user to t_plus")
            return
        target = self.free_flow_target(s1)
        if target is None:
            raise PathConstructionError("no free-flow tick with forecast <= rho for the early first user")
        self.emit(first, target, "first user to free-flow tick")

    def delay_target(self, n: int) -> tuple[int, str]:
        flow = self.flow
        P = len(flow)
        tp = self.t_plus
        s_next = flow.deps[n]
        dP, sP = flow.arrs[-1], flow.deps[-1]
        if n + 1 == P or dP < tp:
            return tp, "delay to t_plus"
        if dP > tp:
            t = self.free_flow_target(s_next)
            if t is None:
                raise PathConstructionError("no later free-flow tick while the last arrival exceeds t_plus")
            return t, "delay to free-flow tick"
        if sP != dP:
            return tp, "delay to t_plus (last user queued)"
        t = tp - 1
        if not flow.occupied(t):
            return t, "delay to just before the last user"
        cost = flow.cost_of(flow.users[n])
        for cand in range(t - 1, s_next, -1):
            if not flow.occupied(cand) and cost > _forecast_fraction(flow, cand):
                msg = f"tick {t} occupied; delayed user {flow.users[n]} to nearest improving tick {cand}"
                log.info(msg)
                self.path.substitutions.append(msg)
                return cand, "delay (substituted tick)"
        raise PathConstructionError(f"no improving tick between {s_next} and {t}")

    def phase_b(self) -> None:
        flow = self.flow
        P = len(flow)
        n = 0
        while n < P and flow.deps[n] == self.eq[n]:
            n += 1
        target = self.eq[n]
        if flow.deps[n] > target:
            mover = flow.users[-1]
            self.emit(mover, target, f"fix rank {n + 1}")
        else:
            tick, note = self.delay_target(n)
            self.emit(flow.users[n], tick, note)

    def build(self, max_steps: int) -> BetterResponsePath:
        flow = self.flow
        while flow.deps != self.eq:
            if len(self.path.steps) >= max_steps:
                raise PathConstructionError(f"no convergence within {max_steps} steps")
            if flow.deps[0] != self.t_minus:
                self.phase_a()
            else:
                self.phase_b()
        self.path.end = flow.profile()
        return self.path


def build_ordered_path(config: GameConfig, initial: TimeProfile, max_steps: int | None = None) -> BetterResponsePath:
    initial.check_range(config)
    builder = _Builder(config, initial)
    if max_steps is None:
        max_steps = 4 * config.num_users * config.num_ticks
    return builder.build(max_steps)


@dataclass(frozen=True)
class PathViolation:
    step: int
    reason: str


def _ordered_prefix(flow: FlowState, eq: list[int]) -> int:
    if flow.deps[0] != eq[0]:
        return 0
    n = 0
    while n < len(eq) and flow.deps[n] == eq[n]:
        n += 1
    return n


def validate_path(path: BetterResponsePath, config: GameConfig, ordered: bool = False) -> PathViolation | None:
    """Replay ``path``; returns the first violation or None when every step is a valid better response."""
    flow = FlowState(path.start, config)
    eq = list(equilibrium_solution(config).departure_ticks) if ordered else []
    H = config.horizon_ticks
    for step in path.steps:
        user = step.user
        if user not in flow.tick_of:
            return PathViolation(step.step, f"unknown user {user}")
        if flow.tick_of[user] != step.from_tick:
            return PathViolation(step.step, f"user {user} is at {flow.tick_of[user]}, not {step.from_tick}")
        if step.to_tick == step.from_tick:
            return PathViolation(step.step, "no change of departure time")
        if not -H <= step.to_tick <= H:
            return PathViolation(step.step, f"tick {step.to_tick} outside the window")
        if flow.occupied(step.to_tick):
            return PathViolation(step.step, f"tick {step.to_tick} is occupied")
        cost = flow.cost_of(user)
        forecast = _forecast_fraction(flow, step.to_tick)
        if not cost > forecast:
            return PathViolation(step.step, f"forecast {forecast * config.cost_unit} does not improve cost {cost * config.cost_unit}")
        if ordered:
            n = _ordered_prefix(flow, eq)
            if n:
                if user in flow.users[:n]:
                    return PathViolation(step.step, f"equilibrated user {user} moved (prefix of {n})")
                if step.to_tick <= flow.deps[n - 1]:
                    return PathViolation(step.step, f"user {user} overtook the equilibrated prefix of {n}")
        flow.move(user, step.to_tick)
    if flow.profile() != path.end:
        return PathViolation(len(path.steps), "replayed end profile differs from the recorded one")
    return None


def write_path(path: BetterResponsePath, config: GameConfig, target: Path) -> None:
    lines = ["# step user from to cost_before forecast note"]
    for st in path.steps:
        lines.append(
            f"{st.step} {st.user} {config.to_time(st.from_tick)} {config.to_time(st.to_tick)} "
            f"{st.cost_before} {st.forecast} {st.note.replace(' ', '_')}"
        )
    target.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# exhaustive profile graph
# ---------------------------------------------------------------------------


@dataclass
class AcyclicityReport:
    is_weakly_acyclic: bool
    num_nodes: int
    num_edges: int
    equilibrium: tuple[int, ...]
    equilibrium_is_sink: bool
    sinks: list[tuple[int, ...]]
    unreachable: list[tuple[int, ...]]
    symmetry_reduced: bool = True
    edges: list[tuple[tuple[int, ...], tuple[int, ...]]] | None = None

    @property
    def unique_sink(self) -> bool:
        return self.sinks == [self.equilibrium]


def graph_size(config: GameConfig) -> int:
    """Nodes of the symmetry-reduced graph: one per set of occupied ticks."""
    return math.comb(config.num_ticks, config.num_users)


def exhaustive_weak_acyclicity(
    config: GameConfig, node_budget: int = 10**6, keep_edges: bool = False
) -> AcyclicityReport:
    """Every profile of a tiny config, one edge per single-user better response.

    Users are interchangeable, so a profile is identified with its sorted
    departure ticks; this shrinks the graph by the P! relabelings.
    """
    size = graph_size(config)
    if size > node_budget:
        raise BudgetExceeded(size, node_budget)
    eq = tuple(equilibrium_solution(config).departure_ticks)
    H = config.horizon_ticks
    nodes = list(itertools.combinations(range(-H, H + 1), config.num_users))
    index = {node: i for i, node in enumerate(nodes)}
    reverse: list[list[int]] = [[] for _ in nodes]
    out_degree = [0] * len(nodes)
    edges: list[tuple[tuple[int, ...], tuple[int, ...]]] | None = [] if keep_edges else None
    num_edges = 0
    for i, node in enumerate(nodes):
        profile = TimeProfile(node)
        targets: set[tuple[int, ...]] = set()
        for user in range(1, config.num_users + 1):
            for tick in better_response_set(profile, user, config):
                nxt = list(node)
                nxt[user - 1] = tick
                targets.add(tuple(sorted(nxt)))
        out_degree[i] = len(targets)
        for t in sorted(targets):
            reverse[index[t]].append(i)
            if edges is not None:
                edges.append((node, t))
        num_edges += len(targets)

    seen = [False] * len(nodes)
    root = index[eq]
    seen[root] = True
    queue = deque([root])
    while queue:
        j = queue.popleft()
        for i in reverse[j]:
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    sinks = [nodes[i] for i in range(len(nodes)) if out_degree[i] == 0]
    unreachable = [nodes[i] for i in range(len(nodes)) if not seen[i]]
    eq_sink = out_degree[root] == 0
    return AcyclicityReport(
        is_weakly_acyclic=eq_sink and not unreachable,
        num_nodes=len(nodes),
        num_edges=num_edges,
        equilibrium=eq,
        equilibrium_is_sink=eq_sink,
        sinks=sinks,
        unreachable=unreachable,
        edges=edges,
    )


def write_edge_list(report: AcyclicityReport, config: GameConfig, target: Path) -> None:
    """One edge per line: comma-separated sorted departure times, ``src -> dst``."""

    def fmt(node: tuple[int, ...]) -> str:
        return ",".join(str(config.to_time(t)) for t in node)

    lines = ["# dtc profile graph: sorted departure times, one better-response edge per line"]
    for src, dst in report.edges or []:
        lines.append(f"{fmt(src)} -> {fmt(dst)}")
    target.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checks used by the property suites
# ---------------------------------------------------------------------------


def last_user_bound_holds(outcome: TripOutcome) -> bool:
    """t_minus <= s_1 implies C_P >= rho, strictly when t_minus < s_1."""
    cfg = outcome.config
    s1 = cfg.to_time(outcome.departures[0])
    last = cfg.cost_from_units(outcome.cost_units[-1])
    if s1 > cfg.t_minus:
        return last > cfg.rho
    if s1 == cfg.t_minus:
        return last >= cfg.rho
    return True


def free_flow_witness(profile: TimeProfile | FlowState, config: GameConfig) -> int | None:
    """A free tick whose forecast is V(t) <= rho, or None."""
    flow = profile if isinstance(profile, FlowState) else FlowState(profile, config)
    lo, hi = config.to_tick(config.t_minus), config.to_tick(config.t_plus)
    for t in _free_flow_ticks(flow, lo, hi, lo - 1):
        return t
    return None


def needs_free_flow_witness(outcome: TripOutcome) -> bool:
    cfg = outcome.config
    return outcome.arrivals[-1] - outcome.departures[0] > cfg.headway_ticks * (cfg.num_users - 1)
