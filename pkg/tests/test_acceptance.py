"""Acceptance criteria 1-10, one test each, one PASS/FAIL line each.

Run directly for a plain report::

    python -m tests.test_acceptance

The full-scale general-regime run (P = 101) is opt-in: set DTC_FULL_SCALE=1.
"""

from __future__ import annotations

import os
import random
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import pytest

from dtcgame.cli import main as dtc
from dtcgame.core_model import FlowState, GameConfig, TimeProfile, compute_arrivals
from dtcgame.dynamics import (
    FIXATION,
    NO_MOVE,
    DynamicsParams,
    naive_step,
    new_state,
    run,
    special_initial_profile,
    uniform_initial_profile,
)
from dtcgame.equilibrium import equilibrium_solution, fluid_correspondence, max_unilateral_improvement, verify_epsilon_nash
from dtcgame.forecast import is_stationary
from dtcgame.verification import (
    brute_force_arrivals,
    build_ordered_path,
    exhaustive_weak_acyclicity,
    free_flow_witness,
    last_user_bound_holds,
    needs_free_flow_witness,
    validate_path,
)

try:
    from .helpers import random_game
except ImportError:  # run as a script
    from helpers import random_game

RESULT_LINES: list[str] = []

BASE = GameConfig(num_users=101, user_size=1, capacity=1, beta=Fraction(1, 2), gamma=2, grid_step=Fraction(1, 100), horizon=100)
GENERAL = GameConfig(num_users=21, grid_step=Fraction(1, 100), horizon=25)


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULT_LINES.append(line)
    print(line)
    return ok


def initial_rng(seed: int) -> random.Random:
    """Same stream the CLI uses for generated initial profiles."""
    return random.Random(f"initial:{seed}")


# ---------------------------------------------------------------------------


def criterion_1() -> bool:
    sol = equilibrium_solution(BASE)
    fluid = fluid_correspondence(BASE)
    got = (sol.epsilon, sol.equilibrium_cost, sol.first_departure, sol.last_departure, sol.critical_order, fluid.early_rate, fluid.late_rate)
    want = (3, 40, -80, 20, 81, 2, Fraction(1, 3))
    ok = got == want and all(isinstance(v, (Fraction, int)) for v in got)
    return report(1, ok, f"eps, rho, t-, t+, o_cr, r_e, r_l = {', '.join(map(str, got))}")


def criterion_2() -> bool:
    start = time.perf_counter()
    prof = equilibrium_solution(BASE).profile()
    verdict = verify_epsilon_nash(prof, 3, BASE)
    worst = max_unilateral_improvement(prof, BASE)
    elapsed = time.perf_counter() - start
    ok = verdict.holds and worst is not None and worst.improvement < 3 and elapsed < 60
    return report(2, ok, f"eps=3 holds={verdict.holds}, max improvement {worst.improvement} < 3 ({elapsed:.1f}s)")


def criterion_3() -> bool:
    prof = equilibrium_solution(BASE).profile()
    stationary = is_stationary(prof, BASE)
    state = new_state(prof, BASE, seed=2024)
    moves = sum(naive_step(state) != NO_MOVE for _ in range(10_000))
    ok = stationary and moves == 0
    return report(3, ok, f"stationary={stationary}, moves in 10000 naive draws = {moves}")


def criterion_4() -> bool:
    eq_ticks = list(equilibrium_solution(BASE).departure_ticks)
    eq_rows = [{k: v for k, v in r.items() if k != "user"} for r in sorted(compute_arrivals(equilibrium_solution(BASE).profile(), BASE).rows(), key=lambda r: r["order"])]
    days = []
    ok = True
    for seed in range(10):
        prof = special_initial_profile(BASE, initial_rng(seed))
        traj = run(BASE, prof, FIXATION, seed=seed, max_days=5000, keep_records=False)
        final_rows = [
            {k: v for k, v in r.items() if k != "user"}
            for r in sorted(compute_arrivals(traj.final_profile, BASE).rows(), key=lambda r: r["order"])
        ]
        good = traj.converged and traj.final_profile.sorted_ticks() == eq_ticks and final_rows == eq_rows
        ok &= good
        days.append(traj.days if good else f"FAIL@{traj.days}")
    return report(4, ok, f"10 special-regime seeds, convergence days {days}")


def criterion_5() -> bool:
    tm = GENERAL.to_tick(GENERAL.t_minus)
    params = DynamicsParams(stuck_threshold=2000)
    details = []
    ok = True
    for seed in range(10):
        prof = uniform_initial_profile(GENERAL, initial_rng(seed))
        traj = run(GENERAL, prof, FIXATION, seed=seed, max_days=10**6, params=params)
        bracketed = all(r.lower_bound <= tm <= r.upper_bound for r in traj.records)
        good = traj.converged and bracketed and traj.records[-1].rmse == 0
        ok &= good
        details.append(f"{traj.days}d/{traj.bound_updates}b" + ("" if good else "!"))
    return report(5, ok, f"P=21 general regime, days/bound-updates {details}; t- bracketed throughout")


def criterion_5_full_scale() -> bool:
    tm = BASE.to_tick(BASE.t_minus)
    prof = uniform_initial_profile(BASE, initial_rng(0))
    traj = run(BASE, prof, FIXATION, seed=0, max_days=5 * 10**6, keep_records=False)
    bracketed = all(r.lower_bound <= tm <= r.upper_bound for r in traj.bound_history)
    ok = traj.converged and bracketed
    return report(5, ok, f"P=101 general regime: converged={traj.converged} after {traj.days} days, {traj.bound_updates} bound updates")


def criterion_6() -> bool:
    rows = []
    ok = True
    for m, P in ((Fraction(1), 101), (Fraction(1, 2), 201), (Fraction(1, 10), 1001)):
        cfg = BASE.with_changes(num_users=P, user_size=m)
        sol = equilibrium_solution(cfg)
        good = (sol.equilibrium_cost, sol.first_departure, sol.last_departure, sol.epsilon) == (40, -80, 20, 3 * m)
        out = compute_arrivals(sol.profile(), cfg)
        good &= set(out.cost_units) == {cfg.cost_to_units(40)}
        ok &= good
        rows.append(f"(m={m}, P={P}): rho={sol.equilibrium_cost}, [{sol.first_departure}, {sol.last_departure}], eps={sol.epsilon}")
    return report(6, ok, "; ".join(rows))


def criterion_7() -> bool:
    rng = random.Random(7)
    mismatches = 0
    for _ in range(1000):
        cfg, prof = random_game(rng)
        if compute_arrivals(prof, cfg) != brute_force_arrivals(prof, cfg):
            mismatches += 1
    return report(7, mismatches == 0, f"1000 random profiles (P <= 12), mismatches = {mismatches}")


def criterion_8() -> bool:
    rng = random.Random(8)
    failures = 0
    steps = 0
    for _ in range(100):
        cfg, prof = random_game(rng)
        try:
            path = build_ordered_path(cfg, prof)
        except Exception:
            failures += 1
            continue
        steps += len(path)
        done = path.end.sorted_ticks() == list(equilibrium_solution(cfg).departure_ticks)
        if not done or validate_path(path, cfg, ordered=True) is not None:
            failures += 1
    tiny = GameConfig(num_users=2, grid_step=Fraction(1, 10), horizon=1)
    graph = exhaustive_weak_acyclicity(tiny)
    ok = failures == 0 and graph.is_weakly_acyclic and graph.unique_sink
    return report(
        8,
        ok,
        f"100 ordered paths ({steps} steps), failures = {failures}; P=2 graph {graph.num_nodes} nodes: "
        f"weakly acyclic={graph.is_weakly_acyclic}, unique sink={graph.unique_sink}",
    )


def criterion_9() -> bool:
    rng = random.Random(9)
    cfg = BASE
    H = cfg.horizon_ticks
    slope = 0
    for _ in range(100_000):
        t = rng.randint(-H, H)
        dt = rng.randint(0, 2 * H)
        dv = cfg.schedule_units(t + dt) - cfg.schedule_units(t)
        if not -cfg.beta_units * dt <= dv <= cfg.gamma_units * dt:
            slope += 1

    fifo = 0
    for _ in range(10_000):
        small, prof = random_game(rng)
        before = compute_arrivals(prof, small)
        q = rng.randint(1, small.num_users)
        sq = prof.tick_of(q)
        later = [t for t in range(sq + 1, small.horizon_ticks + 1) if t not in set(prof.departures)]
        if not later:
            continue
        after = compute_arrivals(prof.moved(q, rng.choice(later)), small)
        for p in range(1, small.num_users + 1):
            if prof.tick_of(p) < sq:
                kb, ka = before.rank_of[p], after.rank_of[p]
                if (before.arrivals[kb], before.cost_units[kb]) != (after.arrivals[ka], after.cost_units[ka]):
                    fifo += 1

    c1 = c3 = needed = 0
    for _ in range(10_000):
        small, prof = random_game(rng)
        out = compute_arrivals(prof, small)
        if not last_user_bound_holds(out):
            c1 += 1
        if needs_free_flow_witness(out):
            needed += 1
            if free_flow_witness(FlowState(prof, small), small) is None:
                c3 += 1
    ok = slope == fifo == c1 == c3 == 0
    return report(
        9,
        ok,
        f"violations: slope bound {slope}/100000, FIFO {fifo}/10000, last-user bound {c1}/10000, "
        f"free-flow tick {c3}/{needed} spread profiles",
    )


def criterion_10() -> bool:
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for name in ("a", "b"):
            out = Path(tmp) / name
            dtc(["run", "--seed", "10", "--initial", "special", "--max-days", "1500", "--out", str(out)])
            outs.append((out / "trajectory.csv").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    return report(10, ok, f"two runs of seed 10 -> trajectory.csv identical={outs[0] == outs[1]} ({len(outs[0])} bytes)")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_criterion(criterion, capsys):
    ok = criterion()
    assert ok, RESULT_LINES[-1]


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("DTC_FULL_SCALE"), reason="full-scale P=101 general run is opt-in (DTC_FULL_SCALE=1)")
def test_criterion_5_full_scale():
    assert criterion_5_full_scale(), RESULT_LINES[-1]


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    if os.environ.get("DTC_FULL_SCALE"):
        results.append(criterion_5_full_scale())
    raise SystemExit(0 if all(results) else 1)
