import numpy as np
import pandas as pd
import pytest

from cli import EXIT_BAD_ARGS, EXIT_CALIBRATION, EXIT_OK, EXIT_PARSE, EXIT_PARTIAL_SWEEP, main, policy_dump_frame
from config import DEFAULTS
from dp_solver import SolverConfig, calibrate_lambda
from policy_file import SWEEP_COLUMNS, SWEEP_FAILED, PolicyFile, read_policy_file, write_policy_file

SMALL = ["--l-max", "20", "--grid-points", "801", "--expectation", "exact", "--v-steps", "120", "--v-tol", "1e-5"]


@pytest.fixture
def n2_path(n2_solution, tmp_path):
    path = tmp_path / "n2.fbdp"
    write_policy_file(str(path), PolicyFile.from_solution(n2_solution))
    return str(path)


class TestArguments:
    @pytest.mark.parametrize("command, flags", [
        ("solve", ["--n", "--s", "--config", "--l-max", "--grid-points", "--quad-order", "--expectation", "--v-max",
                   "--v-steps", "--v-tol", "--lambda-tol", "--output", "--verbose"]),
        ("sweep", ["--n", "--s", "--db", "--one-bit", "--sk", "--trials", "--allow-long-horizon", "--output"]),
        ("simulate", ["--policy", "--trials", "--seed", "--m", "--workers", "--csv"]),
        ("policy-dump", ["--policy", "--stage", "--coords", "--y-max", "--output"]),
    ])
    def test_help_documents_flags(self, command, flags, capsys):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in flags:
            assert flag in out

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["solve", "--n", "two", "--s", "1"])
        assert exc.value.code == EXIT_BAD_ARGS

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == EXIT_BAD_ARGS

    @pytest.mark.parametrize("argv", [
        ["solve", "--n", "0", "--s", "1"],
        ["solve", "--n", "1", "--s", "-1"],
        ["solve", "--n", "1", "--s", "1", "--grid-points", "400"],
        ["solve", "--n", "1", "--s", "1", "--config", "does-not-exist.env"],
    ])
    def test_bad_values(self, argv):
        assert main(argv) == EXIT_BAD_ARGS


class TestSolve:
    def test_writes_policy(self, tmp_path, capsys):
        path = tmp_path / "n1.fbdp"
        assert main(["solve", "--n", "1", "--s", "1", *SMALL, "--output", str(path)]) == EXIT_OK
        pf = read_policy_file(str(path))
        assert pf.header["S"] == 1.0
        assert pf.header["points"] == 801
        assert abs(pf.header["energy"] - 1.0) <= 1e-3
        assert "lambda" in capsys.readouterr().out

    def test_infeasible(self, tmp_path):
        argv = ["solve", "--n", "1", "--s", "4", *SMALL, "--v-max", "0.5", "--output", str(tmp_path / "x.fbdp")]
        assert main(argv) == EXIT_CALIBRATION
        assert not (tmp_path / "x.fbdp").exists()

    def test_config_file(self, tmp_path, monkeypatch):
        for key in DEFAULTS:
            monkeypatch.setenv(key, "")
        env = tmp_path / "small.env"
        env.write_text("FBDP_L_MAX=20\nFBDP_GRID_POINTS=201\nFBDP_QUAD_ORDER=24\nFBDP_V_STEPS=120\n")
        path = tmp_path / "n1.fbdp"
        assert main(["solve", "--n", "1", "--s", "1", "--config", str(env), "--output", str(path)]) == EXIT_OK
        assert read_policy_file(str(path)).header["points"] == 201

    def test_flags_beat_config_file(self, tmp_path, monkeypatch):
        for key in DEFAULTS:
            monkeypatch.setenv(key, "")
        env = tmp_path / "small.env"
        env.write_text("FBDP_L_MAX=20\nFBDP_GRID_POINTS=201\nFBDP_QUAD_ORDER=24\nFBDP_V_STEPS=120\n")
        path = tmp_path / "n1.fbdp"
        argv = ["solve", "--n", "1", "--s", "1", "--config", str(env), "--grid-points", "301", "--output", str(path)]
        assert main(argv) == EXIT_OK
        assert read_policy_file(str(path)).header["points"] == 301


class TestSweep:
    def test_rows_and_baselines(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["sweep", "--n", "1", "--s", "0.5", "1", "--sk", "--one-bit", *SMALL, "--output", str(out)]) == EXIT_OK
        df = pd.read_csv(out)
        assert list(df.columns) == SWEEP_COLUMNS
        assert len(df) == 2
        assert df["ber_sk"].notna().all()
        # one-bit feedback needs two channel uses
        assert df["ber_one_bit"].isna().all()
        assert (df["ber_dp"].astype(float) <= df["ber_no_feedback"] + 2e-3).all()

    def test_db_range(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["sweep", "--n", "1", "--db", "0", "1", "1", *SMALL, "--output", str(out)]) == EXIT_OK
        df = pd.read_csv(out)
        assert df["eb_n0_db"].tolist() == pytest.approx([0.0, 1.0])
        assert df["S"].tolist() == pytest.approx([2.0, 2.0 * 10 ** 0.1])

    def test_long_horizon_needs_flag(self, tmp_path):
        assert main(["sweep", "--n", "11", "--s", "1", "--output", str(tmp_path / "s.csv")]) == EXIT_BAD_ARGS

    def test_partial_failure(self, tmp_path):
        out = tmp_path / "sweep.csv"
        argv = ["sweep", "--n", "1", "--s", "0.01", "4", *SMALL, "--v-max", "0.5", "--output", str(out)]
        assert main(argv) == EXIT_PARTIAL_SWEEP
        df = pd.read_csv(out)
        assert len(df) == 2
        assert df.loc[df["S"] == 4.0, "ber_dp"].iloc[0] == SWEEP_FAILED
        assert df.loc[df["S"] == 0.01, "ber_dp"].iloc[0] != SWEEP_FAILED


class TestSimulate:
    def test_report_and_csv_append(self, n2_path, tmp_path, capsys):
        csv = tmp_path / "mc.csv"
        for seed in ("1", "2"):
            argv = ["simulate", "--policy", n2_path, "--trials", "5000", "--seed", seed, "--m", "2", "--csv", str(csv)]
            assert main(argv) == EXIT_OK
        assert "BER" in capsys.readouterr().out
        df = pd.read_csv(csv)
        assert df["seed"].tolist() == [1, 2]
        assert (df["M"] == 2).all()
        assert (df["trials"] == 5000).all()

    def test_corrupt_policy(self, n2_path):
        with open(n2_path, "a", encoding="utf-8") as fh:
            fh.write("garbage\n")
        assert main(["simulate", "--policy", n2_path, "--trials", "10"]) == EXIT_PARSE

    def test_missing_policy(self, tmp_path):
        assert main(["simulate", "--policy", str(tmp_path / "none.fbdp")]) == EXIT_PARSE


class TestPolicyDump:
    def test_first_stage_has_one_row(self, n2_path, tmp_path):
        out = tmp_path / "k1.csv"
        assert main(["policy-dump", "--policy", n2_path, "--stage", "1", "--output", str(out)]) == EXIT_OK
        df = pd.read_csv(out)
        assert list(df.columns) == ["l", "v", "x_m1", "x_m0"]
        assert len(df) == 1
        assert df.loc[0, "x_m1"] == pytest.approx(-df.loc[0, "x_m0"])

    def test_state_coordinates(self, n2_path, n2_solution, tmp_path):
        out = tmp_path / "k2.csv"
        assert main(["policy-dump", "--policy", n2_path, "--stage", "2", "--output", str(out)]) == EXIT_OK
        df = pd.read_csv(out)
        assert len(df) == n2_solution.policy.grid.points
        assert ((df["x_m1"] - df["x_m0"]) >= 0).all()

    def test_output_coordinates(self, n2_path, tmp_path):
        out = tmp_path / "y1.csv"
        argv = ["policy-dump", "--policy", n2_path, "--stage", "2", "--coords", "output", "--y-max", "3", "--output", str(out)]
        assert main(argv) == EXIT_OK
        df = pd.read_csv(out)
        assert list(df.columns) == ["y1", "x2_m1", "x2_m0"]
        assert df["y1"].abs().max() <= 3.0
        assert df["y1"].is_monotonic_increasing

    @pytest.mark.parametrize("extra", [["--stage", "3"], ["--stage", "1", "--coords", "output"]])
    def test_bad_stage(self, n2_path, extra):
        assert main(["policy-dump", "--policy", n2_path, *extra]) == EXIT_BAD_ARGS

    def test_bad_coords(self, n2_path):
        with pytest.raises(SystemExit) as exc:
            main(["policy-dump", "--policy", n2_path, "--stage", "1", "--coords", "polar"])
        assert exc.value.code == EXIT_BAD_ARGS


class TestDeterminism:
    def test_solve_twice_is_byte_identical(self, tmp_path):
        paths = [tmp_path / "a.fbdp", tmp_path / "b.fbdp"]
        for path in paths:
            assert main(["solve", "--n", "1", "--s", "0.5", *SMALL, "--output", str(path)]) == EXIT_OK
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_dump_twice_is_identical(self, n2_path, tmp_path):
        outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for out in outs:
            main(["policy-dump", "--policy", n2_path, "--stage", "2", "--coords", "output", "--output", str(out)])
        assert outs[0].read_text() == outs[1].read_text()


@pytest.mark.slow
class TestSecondStageShape:
    def test_second_transmission_switches_off(self):
        cfg = SolverConfig(N=2, S=2.42, l_max=30.0, grid_points=1201, quad_order=48, v_steps=300)
        pf = PolicyFile.from_solution(calibrate_lambda(2.42, cfg))
        df = policy_dump_frame(pf, 2, "output", y_max=6.0)
        gap = (df["x2_m1"] - df["x2_m0"]).to_numpy()
        y1 = df["y1"].to_numpy()
        assert gap[np.argmin(np.abs(y1))] > 0.0
        assert gap[0] == 0.0 and gap[-1] == 0.0
        x1 = df["x2_m1"].to_numpy()
        x0 = df["x2_m0"].to_numpy()
        active = np.flatnonzero(gap > 0.0)
        first, last = active[0], active[-1]
        # one contiguous transmitting region around y(1) = 0
        assert np.all(gap[first:last + 1] > 0.0)
        # at both switching points the amplitude jumps straight to zero
        assert y1[first] < 0.0 < y1[last]
        assert x1[first - 1] == 0.0 and x1[first] >= 0.3
        assert x0[last + 1] == 0.0 and x0[last] <= -0.3
