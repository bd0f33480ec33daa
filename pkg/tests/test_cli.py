import json
import subprocess
import sys

import numpy as np
import pytest

from shallow_lake.cli import main, read_solution
from shallow_lake.hjb import Grid, SolveOptions, solve
from shallow_lake.model import LakeParams

RHO1 = ["--rho", "1"]


def _json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert main(["solve", *RHO1, "--out", str(out)]) == 0
    return out


def test_solve_writes_outputs(solved_dir):
    lines = (solved_dir / "solution.csv").read_text().splitlines()
    rows = [l for l in lines if not l.startswith("#")]
    assert rows[0] == "x,V,dV,u_star"
    assert len(rows) - 1 == 1001
    digest = _json(solved_dir / "config.json")["config_hash"]
    assert f"# config_hash: {digest}" in lines
    report = _json(solved_dir / "report.json")
    assert report["config_hash"] == digest and report["converged"]
    assert "wall_time" not in report


def test_solution_round_trips(solved_dir):
    v = read_solution(solved_dir / "solution.csv")
    ref, _ = solve(LakeParams(rho=1.0), Grid(10.0, 1000))
    assert np.array_equal(v.values, ref.values)
    data = np.loadtxt(solved_dir / "solution.csv", delimiter=",", comments="#", skiprows=6)
    assert np.allclose(data[:, 3], -1 / data[:, 2], rtol=1e-15)


def test_rerun_is_byte_identical(solved_dir, tmp_path):
    assert main(["solve", *RHO1, "--out", str(tmp_path)]) == 0
    for name in ("solution.csv", "report.json", "config.json"):
        assert (tmp_path / name).read_bytes() == (solved_dir / name).read_bytes()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "lake.cfg"
    cfg.write_text("rho = 0.5\nb = 0.65\n")
    assert main(["solve", "--config", str(cfg), "--rho", "1", "--n", "200", "--out", str(tmp_path / "o")]) == 0
    assert _json(tmp_path / "o" / "config.json")["params"]["rho"] == 1.0


def test_flat_diffusion_flag(tmp_path):
    assert main(["solve", *RHO1, "--scheme-diffusion", "flat", "--out", str(tmp_path)]) == 0
    v = read_solution(tmp_path / "solution.csv")
    ref, _ = solve(LakeParams(rho=1.0), Grid(10.0, 1000), SolveOptions(diffusion="flat"))
    assert v.diffusion == "flat" and np.array_equal(v.values, ref.values)


def test_infeasible_sigma_exit_2(tmp_path, capsys):
    assert main(["solve", "--sigma", "2", "--out", str(tmp_path)]) == 2
    assert "identically -inf" in capsys.readouterr().err


def test_default_parameters_exit_2(tmp_path, capsys):
    # the pinned boundary value at l = 10 is inconsistent with the V(0) bound
    assert main(["solve", "--out", str(tmp_path)]) == 2
    assert "upper bound" in capsys.readouterr().err


def test_non_convergence_exit_3(tmp_path):
    assert main(["solve", *RHO1, "--max-sweeps", "1", "--out", str(tmp_path)]) == 3
    assert _json(tmp_path / "report.json")["converged"] is False


# -- simulate ----------------------------------------------------------------------


def _simulate(out, *extra):
    return main(["simulate", *RHO1, "--x0", "0.5", "--t-max", "10", "--paths", "200", "--out", str(out), *extra])


def test_simulate_benchmark_reproducible(tmp_path):
    assert _simulate(tmp_path / "a", "--seed", "4") == 0
    assert _simulate(tmp_path / "b", "--seed", "4") == 0
    a = (tmp_path / "a" / "estimate.json").read_bytes()
    assert a == (tmp_path / "b" / "estimate.json").read_bytes()
    assert _simulate(tmp_path / "c", "--seed", "5") == 0
    assert _json(tmp_path / "c" / "estimate.json")["mean"] != json.loads(a)["mean"]


def test_simulate_feedback_and_dump(tmp_path, solved_dir):
    sol = solved_dir / "solution.csv"
    assert _simulate(tmp_path, "--policy", f"feedback:{sol}", "--dump-paths", "2") == 0
    est = _json(tmp_path / "estimate.json")
    assert est["n_paths"] == 200 and est["std_error"] > 0
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[1] == "path,t,x,u" and len(lines) == 2 + 2 * 1001


@pytest.mark.parametrize("policy", ["feedback:/nonexistent.csv", "feedback", "constant:0", "greedy"])
def test_simulate_bad_policy_exit_2(tmp_path, policy):
    assert _simulate(tmp_path, "--policy", policy) == 2


# -- verify --------------------------------------------------------------------------


def test_verify_all_pass_with_skips(tmp_path, capsys):
    code = main(["verify", *RHO1, "--c", "2", "--no-mc", "--out", str(tmp_path)])
    checks = json.loads(capsys.readouterr().out)
    assert code == 0
    assert {c["name"]: c["status"] for c in checks}["value_bounds"] == "skipped"
    assert _json(tmp_path / "checks.json")["checks"] == checks


def test_verify_failure_exit_1(tmp_path, capsys):
    assert main(["verify", *RHO1, "--no-mc", "--out", str(tmp_path)]) == 1
    status = {c["name"]: c["status"] for c in json.loads(capsys.readouterr().out)}
    assert status["boundary_identity"] == "pass" and status["asymptotics"] == "fail"


def test_verify_corrupted_solution_exit_1(tmp_path, solved_dir, capsys):
    bad = tmp_path / "bad.csv"
    text = (solved_dir / "solution.csv").read_text().splitlines()
    bad.write_text("\n".join(text[:20]) + "\nnot,a,number,row\n")
    assert main(["verify", "--solution", str(bad), "--no-mc", "--out", str(tmp_path / "o")]) == 1
    checks = json.loads(capsys.readouterr().out)
    assert checks[0]["name"] == "solution_file" and checks[0]["status"] == "fail"


def test_verify_from_solution_file(tmp_path, solved_dir, capsys):
    sol = solved_dir / "solution.csv"
    main(["verify", "--solution", str(sol), "--no-mc", "--out", str(tmp_path)])
    status = {c["name"]: c["status"] for c in json.loads(capsys.readouterr().out)}
    assert status["boundary_identity"] == "pass" and status["gradient_bounds"] == "pass"


# -- sweep -------------------------------------------------------------------------


def test_sweep_empty_axis_exit_2(tmp_path):
    assert main(["sweep", "--axis", "rho", "--values", "", "--out", str(tmp_path)]) == 2


def test_sweep_rows(tmp_path, solved_dir):
    assert main(["sweep", "--axis", "sigma", "--values", "0.1,5", *RHO1, "--out", str(tmp_path)]) == 0
    rows = _json(tmp_path / "sweep.json")["rows"]
    assert [r["status"] for r in rows] == ["ok", "failed"]
    v = read_solution(solved_dir / "solution.csv")
    assert rows[0]["V0"] == v.values[0]
    assert rows[0]["dV0"] == (v.values[1] - v.values[0]) / v.grid.dx
    assert "identically -inf" in rows[1]["error"]
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 4


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "shallow_lake.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "verify" in out.stdout
