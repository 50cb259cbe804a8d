import csv
from fractions import Fraction

import pytest

from dtcgame.cli import main
from dtcgame.harness import decimal_str, exact, parse_key_values, rmse_str, UsageError

SMALL = """
# eleven users, one-second headway
num_users = 11
grid_step = 1/100
horizon = 15
"""


@pytest.fixture
def small_cfg_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def _summary(text):
    return parse_key_values(text)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_equilibrium_summary(tmp_path, capsys):
    assert main(["equilibrium", "--out", str(tmp_path / "eq")]) == 0
    summary = _summary(capsys.readouterr().out)
    assert (summary["epsilon"], summary["rho"], summary["t_minus"]) == ("3", "40", "-80")
    assert (summary["early_rate"], summary["late_rate"]) == ("2", "1/3")
    rows = _rows(tmp_path / "eq" / "equilibrium.csv")
    assert len(rows) == 101
    assert rows[1]["departure"] == "-159/2" and rows[1]["departure_decimal"] == "-79.500000"
    assert (tmp_path / "eq" / "config.txt").exists()


def test_equilibrium_single_user(tmp_path, capsys):
    assert main(["equilibrium", "--set", "num_users=1", "--set", "horizon=1", "--out", str(tmp_path)]) == 0
    (row,) = _rows(tmp_path / "equilibrium.csv")
    assert all(row[k] == "0" for k in ("departure", "arrival", "queue_delay", "schedule_delay", "trip_cost"))


def test_equilibrium_scaling(tmp_path, capsys):
    args = ["equilibrium", "--set", "user_size=1/2", "--set", "total_mass=100", "--out", str(tmp_path)]
    assert main(args) == 0
    summary = _summary(capsys.readouterr().out)
    assert summary["num_users"] == "201"
    assert (summary["rho"], summary["t_minus"], summary["t_plus"], summary["epsilon"]) == ("40", "-80", "20", "3/2")


def test_inadmissible_grid_is_a_usage_error(tmp_path, capsys):
    assert main(["equilibrium", "--set", "grid_step=1/3", "--out", str(tmp_path)]) == 1
    assert "m(1-beta)/mu" in capsys.readouterr().err


def test_verify_equilibrium_file(tmp_path, capsys):
    main(["equilibrium", "--out", str(tmp_path)])
    capsys.readouterr()
    profile = str(tmp_path / "equilibrium.csv")
    assert main(["verify", profile, "--epsilon", "3"]) == 0
    assert _summary(capsys.readouterr().out)["holds"] == "true"
    assert main(["verify", profile, "--epsilon", "0", "--out", str(tmp_path / "v")]) == 2
    verdict = _summary(capsys.readouterr().out)
    assert verdict["holds"] == "false" and "witness_user" in verdict
    assert (tmp_path / "v" / "verdict.txt").exists()


def test_verify_rejects_bad_files(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["verify", str(empty)]) == 1
    assert "empty" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("user,departure\n1,-80\n2,oops\n")
    assert main(["verify", str(bad)]) == 1
    assert "bad.csv:3" in capsys.readouterr().err


def test_run_special_regime(tmp_path, small_cfg_file, capsys):
    out = tmp_path / "run"
    code = main(["run", "--config", str(small_cfg_file), "--seed", "2", "--max-days", "20000",
                 "--snapshot-days", "1,5", "--out", str(out)])
    assert code == 0
    result = _summary(capsys.readouterr().out)
    assert result["converged"] == "true" and result["final_equals_equilibrium"] == "true"
    traj = _rows(out / "trajectory.csv")
    assert traj[0]["day"] == "1" and traj[0]["event"] == "init"
    assert traj[-1]["rmse"] == "0" and traj[-1]["mse"] == "0"
    assert all(r["rmse"] != "0" for r in traj[:-1])
    assert (out / "snapshot_1.csv").exists() and (out / "snapshot_5.csv").exists()
    main(["equilibrium", "--config", str(small_cfg_file), "--out", str(tmp_path / "eq")])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "user"} for r in rows]  # noqa: E731
    assert strip(_rows(out / "snapshot_final.csv")) == strip(_rows(tmp_path / "eq" / "equilibrium.csv"))


def test_run_replay_is_byte_identical(tmp_path, small_cfg_file):
    for name in ("a", "b"):
        main(["run", "--config", str(small_cfg_file), "--seed", "5", "--initial", "uniform",
              "--max-days", "3000", "--stuck-threshold", "300", "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_run_from_provenance_config(tmp_path, small_cfg_file):
    main(["run", "--config", str(small_cfg_file), "--seed", "3", "--max-days", "400", "--out", str(tmp_path / "a")])
    main(["run", "--config", str(tmp_path / "a" / "config.txt"), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_run_not_converged_exit_code(tmp_path, small_cfg_file, capsys):
    assert main(["run", "--config", str(small_cfg_file), "--max-days", "10", "--out", str(tmp_path)]) == 2
    assert _summary(capsys.readouterr().out)["converged"] == "false"
    assert len(_rows(tmp_path / "trajectory.csv")) == 10


def test_run_from_profile_file(tmp_path, small_cfg_file, capsys):
    main(["equilibrium", "--config", str(small_cfg_file), "--out", str(tmp_path / "eq")])
    spec = "file:" + str(tmp_path / "eq" / "equilibrium.csv")
    assert main(["run", "--config", str(small_cfg_file), "--initial", spec, "--out", str(tmp_path / "r")]) == 0
    assert len(_rows(tmp_path / "r" / "trajectory.csv")) == 1


def test_sweep(tmp_path, small_cfg_file, capsys):
    code = main(["sweep", "--config", str(small_cfg_file), "--seeds", "0..2", "--max-days", "20000",
                 "--workers", "2", "--out", str(tmp_path)])
    assert code == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert [r["seed"] for r in rows] == ["0", "1", "2"]
    assert all(r["converged"] == "true" and r["final_rmse"] == "0" for r in rows)
    assert (tmp_path / "cell_0002" / "trajectory.csv").exists()


def test_sweep_over_user_size_keeps_rho(tmp_path, capsys):
    code = main(["sweep", "--set", "total_mass=10", "--set", "horizon=15", "--set", "grid_step=1/100",
                 "--grid", "user_size=1,1/2", "--seeds", "0", "--max-days", "5",
                 "--out", str(tmp_path)])
    assert code == 2  # five days are not enough; the grid itself is the point here
    rows = _rows(tmp_path / "sweep.csv")
    assert [r["num_users"] for r in rows] == ["11", "21"]
    assert {r["rho"] for r in rows} == {"4"}


def test_sweep_empty_grid_is_usage_error(tmp_path, capsys):
    assert main(["sweep", "--seeds", "", "--out", str(tmp_path)]) == 1
    assert main(["sweep", "--grid", "user_size=", "--out", str(tmp_path)]) == 1


def test_acyclicity(tmp_path, capsys):
    args = ["acyclicity", "--set", "num_users=2", "--set", "grid_step=1/10", "--set", "horizon=1"]
    assert main(args + ["--edges", "--out", str(tmp_path / "a")]) == 0
    report = _summary(capsys.readouterr().out)
    assert report["is_weakly_acyclic"] == "true" and report["unique_sink"] == "true"
    assert (tmp_path / "a" / "edges.txt").exists()
    one = ["acyclicity", "--set", "num_users=1", "--set", "grid_step=1/10", "--set", "horizon=1"]
    assert main(one + ["--out", str(tmp_path / "b")]) == 0
    assert _summary(capsys.readouterr().out)["sinks"] == "0"
    assert main(args + ["--node-budget", "10", "--out", str(tmp_path / "c")]) == 1
    assert "210 nodes" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("num_users = 3\nthis line is wrong\n")
    assert main(["equilibrium", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "bad.cfg:2" in capsys.readouterr().err
    bad.write_text("num_users = 3\ncolour = blue\n")
    assert main(["equilibrium", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "colour" in capsys.readouterr().err
    assert main(["run", "--initial", "sideways", "--out", str(tmp_path)]) == 1
    assert main(["bogus"]) == 1


def test_number_formatting():
    assert exact(Fraction(-159, 2)) == "-159/2"
    assert exact(Fraction(4)) == "4"
    assert decimal_str(Fraction(1, 3)) == "0.333333"
    assert decimal_str(Fraction(5, 2), 0) == "2"  # half-even
    assert rmse_str(Fraction(0)) == "0"
    assert rmse_str(Fraction(1, 4)) == "0.500000000"


def test_parse_rejects_duplicate_keys():
    with pytest.raises(UsageError):
        parse_key_values("a = 1\na = 2\n")
