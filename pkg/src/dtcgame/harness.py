"""Experiment plumbing behind the ``dtc`` command: config files, initial
profiles, CSV writers and one function per subcommand.

Config files are flat ``key = value`` text, one key per line, ``#`` starts a
comment.  Rationals are written ``p/q`` or as decimals (converted exactly).
Every command writes ``config.txt`` with the fully resolved settings so that a
run directory can be replayed with ``--config DIR/config.txt``.
"""

from __future__ import annotations

import csv
import itertools
import logging
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction
from pathlib import Path

from .core_model import GameConfig, TimeProfile, TripOutcome, as_fraction, compute_arrivals, profile_from_departures, validate_grid
from .dynamics import (
    FIXATION,
    NAIVE,
    DayRecord,
    DynamicsParams,
    run,
    special_initial_profile,
    uniform_initial_profile,
)
from .equilibrium import equilibrium_solution, fluid_correspondence, verify_epsilon_nash
from .verification import exhaustive_weak_acyclicity, graph_size, write_edge_list

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2
EXIT_INVARIANT = 3

DECIMAL_PLACES = 6
RMSE_PLACES = 9

GAME_KEYS = ("num_users", "user_size", "capacity", "beta", "gamma", "grid_step", "horizon")
INITIAL_KINDS = ("equilibrium", "special", "uniform")


class UsageError(Exception):
    """Bad command line, config file or input file; maps to exit code 1."""


# ---------------------------------------------------------------------------
# number formatting
# ---------------------------------------------------------------------------


def exact(q: Fraction | int) -> str:
    q = Fraction(q)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def decimal_str(q: Fraction | int, places: int = DECIMAL_PLACES) -> str:
    """Half-even rounding of the exact value to ``places`` decimals."""
    q = Fraction(q)
    with localcontext() as ctx:
        ctx.prec = 60
        value = Decimal(q.numerator) / Decimal(q.denominator)
        return str(value.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN))


def rmse_str(mse: Fraction) -> str:
    """Square root of the exact mean squared error; "0" exactly when it vanishes."""
    if mse == 0:
        return "0"
    with localcontext() as ctx:
        ctx.prec = 60
        root = (Decimal(mse.numerator) / Decimal(mse.denominator)).sqrt()
        return str(root.quantize(Decimal(1).scaleb(-RMSE_PLACES), rounding=ROUND_HALF_EVEN))


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    game: GameConfig
    dynamics: str = FIXATION
    seed: int = 0
    initial: str = "special"
    max_days: int = 100_000
    stuck_threshold: int = 10_000
    max_candidates: int = 100
    snapshot_days: tuple[int, ...] = (1, 500, 900)
    epsilon: Fraction | None = None
    extra: dict[str, str] = field(default_factory=dict)

    def lines(self) -> list[str]:
        g = self.game
        out = [f"{k} = {exact(getattr(g, k))}" for k in GAME_KEYS]
        out += [
            f"dynamics = {self.dynamics}",
            f"seed = {self.seed}",
            f"initial = {self.initial}",
            f"max_days = {self.max_days}",
            f"stuck_threshold = {self.stuck_threshold}",
            f"max_candidates = {self.max_candidates}",
            f"snapshot_days = {','.join(map(str, self.snapshot_days))}",
            f"epsilon = {exact(self.epsilon if self.epsilon is not None else g.epsilon)}",
        ]
        out += [f"{k} = {v}" for k, v in sorted(self.extra.items())]
        return out

    def write(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.txt").write_text("\n".join(self.lines()) + "\n")

    def params(self) -> DynamicsParams:
        return DynamicsParams(max_candidates=self.max_candidates, stuck_threshold=self.stuck_threshold)


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{lineno}: missing key")
        if key in values:
            raise UsageError(f"{source}:{lineno}: key {key!r} given twice")
        values[key] = value
    return values


def _rational(key: str, value: str) -> Fraction:
    try:
        return as_fraction(value)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"{key}: {value!r} is not a rational number") from None


def _integer(key: str, value: str) -> int:
    q = _rational(key, value)
    if q.denominator != 1:
        raise UsageError(f"{key}: {value!r} is not an integer")
    return int(q)


def parse_int_list(key: str, value: str) -> tuple[int, ...]:
    """Comma-separated integers; ``a..b`` expands to the inclusive range."""
    out: list[int] = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(_integer(key, lo), _integer(key, hi) + 1))
        else:
            out.append(_integer(key, part))
    return tuple(out)


def build_game(values: dict[str, str]) -> GameConfig:
    """GameConfig from string values; ``total_mass`` Q may replace ``num_users`` (P = Q/m + 1)."""
    kwargs: dict[str, object] = {}
    for key in GAME_KEYS[1:]:
        if key in values:
            kwargs[key] = _rational(key, values[key])
    m = kwargs.get("user_size", Fraction(1))
    if "num_users" in values:
        kwargs["num_users"] = _integer("num_users", values["num_users"])
    elif "total_mass" in values:
        users = _rational("total_mass", values["total_mass"]) / m + 1
        if users.denominator != 1:
            raise UsageError(f"total_mass / user_size + 1 = {users} is not a whole number of users")
        kwargs["num_users"] = int(users)
    else:
        kwargs["num_users"] = 101
    try:
        return GameConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


KNOWN_KEYS = set(GAME_KEYS) | {
    "total_mass",
    "dynamics",
    "seed",
    "initial",
    "max_days",
    "stuck_threshold",
    "max_candidates",
    "snapshot_days",
    "epsilon",
    "seeds",
}


def experiment_from_values(values: dict[str, str]) -> ExperimentConfig:
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    exp = ExperimentConfig(game=build_game(values))
    if "dynamics" in values:
        exp.dynamics = values["dynamics"]
    if exp.dynamics not in (NAIVE, FIXATION):
        raise UsageError(f"dynamics must be {NAIVE} or {FIXATION}, got {exp.dynamics!r}")
    if "seed" in values:
        exp.seed = _integer("seed", values["seed"])
    if "initial" in values:
        exp.initial = values["initial"]
    for key in ("max_days", "stuck_threshold", "max_candidates"):
        if key in values:
            setattr(exp, key, _integer(key, values[key]))
    if "snapshot_days" in values:
        exp.snapshot_days = parse_int_list("snapshot_days", values["snapshot_days"])
    if "epsilon" in values:
        exp.epsilon = _rational("epsilon", values["epsilon"])
    if "seeds" in values:
        exp.extra["seeds"] = values["seeds"]
    check_initial_spec(exp.initial)
    return exp


def load_values(path: Path | None) -> dict[str, str]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_key_values(text, str(path))


def check_initial_spec(spec: str) -> None:
    if spec in INITIAL_KINDS or (spec.startswith("file:") and len(spec) > 5):
        return
    raise UsageError(f"initial must be one of {', '.join(INITIAL_KINDS)} or file:PATH, got {spec!r}")


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


def read_profile(path: Path, config: GameConfig) -> TimeProfile:
    """CSV with ``user`` and ``departure`` columns (header required, other columns ignored)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read profile {path}: {exc.strerror}") from None
    rows = list(csv.reader(text.splitlines()))
    body = [(i, r) for i, r in enumerate(rows, start=1) if r and not r[0].lstrip().startswith("#")]
    if not body:
        raise UsageError(f"{path}:1: empty profile file")
    header_line, header = body[0]
    cols = [c.strip() for c in header]
    if "user" not in cols or "departure" not in cols:
        raise UsageError(f"{path}:{header_line}: header must name 'user' and 'departure' columns")
    iu, idep = cols.index("user"), cols.index("departure")
    pairs = []
    for lineno, row in body[1:]:
        try:
            user = int(row[iu])
            time = as_fraction(row[idep].strip())
        except (IndexError, ValueError, ZeroDivisionError):
            raise UsageError(f"{path}:{lineno}: cannot parse user/departure from {','.join(row)!r}") from None
        pairs.append((user, time))
    if not pairs:
        raise UsageError(f"{path}:{header_line}: no profile rows")
    try:
        return profile_from_departures(pairs, config)
    except Exception as exc:  # ProfileError and friends carry their own message
        raise UsageError(f"{path}: {exc}") from None


def initial_profile(exp: ExperimentConfig) -> TimeProfile:
    game = exp.game
    spec = exp.initial
    if spec == "equilibrium":
        return equilibrium_solution(game).profile()
    if spec.startswith("file:"):
        return read_profile(Path(spec[5:]), game)
    rng = random.Random(f"initial:{exp.seed}")
    if spec == "special":
        return special_initial_profile(game, rng)
    return uniform_initial_profile(game, rng)


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------

OUTCOME_COLUMNS = ("departure", "arrival", "queue_delay", "schedule_delay", "trip_cost")


def outcome_header() -> list[str]:
    head = ["user", "order"]
    for col in OUTCOME_COLUMNS:
        head += [col, f"{col}_decimal"]
    return head


def write_outcome_csv(outcome: TripOutcome, target: Path) -> None:
    """Rows in departure order; exact ``p/q`` columns followed by their decimal rounding."""
    rows = sorted(outcome.rows(), key=lambda r: r["order"])
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(outcome_header())
        for r in rows:
            line: list[str] = [str(r["user"]), str(r["order"])]
            for col in OUTCOME_COLUMNS:
                line += [exact(r[col]), decimal_str(r[col])]
            w.writerow(line)


TRAJECTORY_HEADER = [
    "day",
    "mse",
    "rmse",
    "first_departure",
    "first_departure_decimal",
    "fixed_prefix",
    "event",
    "lower_bound",
    "lower_bound_decimal",
    "upper_bound",
    "upper_bound_decimal",
]


class TrajectoryWriter:
    def __init__(self, target: Path, config: GameConfig):
        self.fh = open(target, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(TRAJECTORY_HEADER)
        self.config = config
        self.mse_scale = config.cost_unit**2 / config.num_users

    def __call__(self, rec: DayRecord) -> None:
        cfg = self.config
        mse = self.mse_scale * rec.sq_units
        s1, lo, hi = (cfg.to_time(t) for t in (rec.first_departure, rec.lower_bound, rec.upper_bound))
        self.w.writerow(
            [
                rec.day,
                exact(mse),
                rmse_str(mse),
                exact(s1),
                decimal_str(s1),
                rec.fixed_prefix,
                rec.event,
                exact(lo),
                decimal_str(lo),
                exact(hi),
                decimal_str(hi),
            ]
        )

    def close(self) -> None:
        self.fh.close()


def write_summary(pairs: list[tuple[str, object]], target: Path | None) -> str:
    text = "".join(f"{k} = {_fmt(v)}\n" for k, v in pairs)
    if target is not None:
        target.write_text(text)
    return text


def _fmt(v: object) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, Fraction)):
        return exact(v)
    return str(v)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_equilibrium(exp: ExperimentConfig, out: Path) -> tuple[int, str]:
    game = exp.game
    problems = validate_grid(game)
    if problems:
        return EXIT_USAGE, "grid step is not admissible:\n" + "\n".join(f"  {p}" for p in problems) + "\n"
    sol = equilibrium_solution(game)
    fluid = fluid_correspondence(game)
    exp.write(out)
    outcome = compute_arrivals(sol.profile(), game)
    write_outcome_csv(outcome, out / "equilibrium.csv")
    text = write_summary(
        [
            ("num_users", game.num_users),
            ("t_minus", sol.first_departure),
            ("t_plus", sol.last_departure),
            ("rho", sol.equilibrium_cost),
            ("epsilon", sol.epsilon),
            ("critical_order", sol.critical_order),
            ("early_rate", fluid.early_rate),
            ("late_rate", fluid.late_rate),
            ("total_mass", fluid.total_mass),
            ("fluid_cost", fluid.fluid_cost),
            ("fluid_first_departure", fluid.fluid_first_departure),
        ],
        out / "summary.txt",
    )
    return EXIT_OK, text


def cmd_run(exp: ExperimentConfig, out: Path) -> tuple[int, str]:
    game = exp.game
    problems = validate_grid(game)
    if problems:
        return EXIT_USAGE, "grid step is not admissible:\n" + "\n".join(f"  {p}" for p in problems) + "\n"
    initial = initial_profile(exp)
    exp.write(out)
    writer = TrajectoryWriter(out / "trajectory.csv", game)
    try:
        traj = run(
            game,
            initial,
            kind=exp.dynamics,
            seed=exp.seed,
            max_days=exp.max_days,
            params=exp.params(),
            snapshot_days=frozenset(exp.snapshot_days),
            sink=writer,
            keep_records=False,
        )
    finally:
        writer.close()
    for day, profile in sorted(traj.snapshots.items()):
        write_outcome_csv(compute_arrivals(profile, game), out / f"snapshot_{day}.csv")
    final = compute_arrivals(traj.final_profile, game)
    write_outcome_csv(final, out / "snapshot_final.csv")
    with open(out / "bounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "first_departure", "lower_bound", "upper_bound", "t_minus_inside"])
        tm = game.to_tick(game.t_minus)
        for rec in traj.bound_history:
            w.writerow(
                [
                    rec.day,
                    exact(game.to_time(rec.first_departure)),
                    exact(game.to_time(rec.lower_bound)),
                    exact(game.to_time(rec.upper_bound)),
                    _fmt(rec.lower_bound <= tm <= rec.upper_bound),
                ]
            )
    eq_ticks = equilibrium_solution(game).departure_ticks
    text = write_summary(
        [
            ("converged", traj.converged),
            ("days", traj.days),
            ("moves", traj.moves),
            ("bound_updates", traj.bound_updates),
            ("anomalies", traj.anomalies),
            ("final_equals_equilibrium", tuple(final.departures) == tuple(eq_ticks)),
        ],
        out / "result.txt",
    )
    return (EXIT_OK if traj.converged else EXIT_FAILED), text


def cmd_verify(exp: ExperimentConfig, profile_path: Path, out: Path | None) -> tuple[int, str]:
    game = exp.game
    profile = read_profile(profile_path, game)
    eps = exp.epsilon if exp.epsilon is not None else game.epsilon
    verdict = verify_epsilon_nash(profile, eps, game)
    pairs: list[tuple[str, object]] = [
        ("holds", verdict.holds),
        ("epsilon", verdict.epsilon),
        ("max_improvement", verdict.worst.improvement if verdict.worst else Fraction(0)),
    ]
    if verdict.worst is not None:
        pairs += [
            ("witness_user", verdict.worst.user),
            ("witness_departure", verdict.worst.time(game)),
            ("witness_from", game.to_time(profile.tick_of(verdict.worst.user))),
        ]
    if out is not None:
        exp.write(out)
    text = write_summary(pairs, None if out is None else out / "verdict.txt")
    return (EXIT_OK if verdict.holds else EXIT_FAILED), text


def cmd_acyclicity(exp: ExperimentConfig, out: Path, node_budget: int, edges: bool) -> tuple[int, str]:
    game = exp.game
    problems = validate_grid(game)
    if problems:
        return EXIT_USAGE, "grid step is not admissible:\n" + "\n".join(f"  {p}" for p in problems) + "\n"
    size = graph_size(game)
    if size > node_budget:
        return EXIT_USAGE, f"refusing: the profile graph has {size} nodes (budget {node_budget})\n"
    report = exhaustive_weak_acyclicity(game, node_budget=node_budget, keep_edges=edges)
    exp.write(out)
    fmt = lambda node: ",".join(exact(game.to_time(t)) for t in node)  # noqa: E731
    text = write_summary(
        [
            ("is_weakly_acyclic", report.is_weakly_acyclic),
            ("unique_sink", report.unique_sink),
            ("symmetry_reduced", report.symmetry_reduced),
            ("nodes", report.num_nodes),
            ("edges", report.num_edges),
            ("equilibrium", fmt(report.equilibrium)),
            ("sinks", " ".join(fmt(s) for s in report.sinks)),
            ("unreachable", len(report.unreachable)),
        ],
        out / "acyclicity.txt",
    )
    if edges:
        write_edge_list(report, game, out / "edges.txt")
    ok = report.is_weakly_acyclic and report.unique_sink
    return (EXIT_OK if ok else EXIT_FAILED), text


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_HEADER = [
    "cell",
    "seed",
    *GAME_KEYS,
    "rho",
    "t_minus",
    "t_plus",
    "epsilon",
    "status",
    "converged",
    "days",
    "final_rmse",
    "bound_updates",
    "error",
]


def sweep_cells(exp: ExperimentConfig, seeds: tuple[int, ...], grid: dict[str, list[str]], base: dict[str, str]) -> list[ExperimentConfig]:
    """Cartesian product of the grid values times the seed list."""
    if not seeds:
        raise UsageError("sweep needs at least one seed")
    for key, vals in grid.items():
        if key not in GAME_KEYS and key != "total_mass":
            raise UsageError(f"cannot sweep over {key!r}")
        if not vals:
            raise UsageError(f"grid for {key!r} is empty")
    keys = sorted(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        values = dict(base)
        for k, v in zip(keys, combo):
            values[k] = v
        if "total_mass" in grid:
            values.pop("num_users", None)
        game = build_game(values)
        for seed in seeds:
            cells.append(replace(exp, game=game, seed=seed, extra={}))
    return cells


def _run_cell(args: tuple[int, ExperimentConfig, Path]) -> list[str]:
    index, cell, out = args
    g = cell.game
    row = [str(index), str(cell.seed)] + [exact(getattr(g, k)) for k in GAME_KEYS]
    row += [exact(g.rho), exact(g.t_minus), exact(g.t_plus), exact(g.epsilon)]
    try:
        code, _ = cmd_run(cell, out)
    except Exception as exc:  # a failed cell is recorded, the sweep carries on
        return row + ["error", "", "", "", "", f"{type(exc).__name__}: {exc}"]
    if code == EXIT_USAGE:
        return row + ["error", "", "", "", "", "inadmissible grid"]
    result = parse_key_values((out / "result.txt").read_text())
    last = _last_line(out / "trajectory.csv").split(",")
    return row + [
        "ok",
        result["converged"],
        result["days"],
        last[TRAJECTORY_HEADER.index("rmse")],
        result["bound_updates"],
        "",
    ]


def _last_line(path: Path) -> str:
    with open(path, "rb") as fh:
        fh.seek(0, 2)
        pos = fh.tell() - 2
        while pos > 0:
            fh.seek(pos)
            if fh.read(1) == b"\n":
                break
            pos -= 1
        if pos <= 0:
            fh.seek(0)
        return fh.read().decode().strip().splitlines()[-1]


def cmd_sweep(cells: list[ExperimentConfig], out: Path, workers: int | None = None) -> tuple[int, str]:
    if not cells:
        raise UsageError("sweep has no cells")
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, cell, out / f"cell_{i:04d}") for i, cell in enumerate(cells)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(_run_cell, jobs))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
    ok = sum(1 for r in rows if r[SWEEP_HEADER.index("converged")] == "true")
    failed = sum(1 for r in rows if r[SWEEP_HEADER.index("status")] == "error")
    text = f"cells = {len(rows)}\nconverged = {ok}\nerrors = {failed}\n"
    (out / "summary.txt").write_text(text)
    return (EXIT_OK if ok == len(rows) else EXIT_FAILED), text
