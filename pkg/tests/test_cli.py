import json
import math

import numpy as np
import pytest

from cli import jsonable, main
from enums import ExitCode
from expansion import QuadratureSpec, forward_cluster
from pairfn import (
    ClusterTargets,
    RadialFunction,
    cluster_to_correlation,
    g_to_phi,
    hard_core,
    read_radial_csv,
    write_radial_csv,
)
from utils import file_digest

FORWARD_INPUT = {"z": 1e-3, "hard_core": {"d": 1, "delta": 0.1, "r_max": 2.0}, "N": 2}


def write_input(path, data) -> str:
    path.write_text(json.dumps(data))
    return str(path)


def run(out, *arguments) -> int:
    return main(["--out", str(out), "--seed", "7", "--log-level", "warning", *arguments])


@pytest.fixture
def rho2_targets(tmp_path, weak_tail) -> tuple[float, str]:
    """rho1 and the rho2 csv of (z = 1e-3, weak_tail) at order two."""
    forward = forward_cluster(1e-3, weak_tail, 2, QuadratureSpec(seed=7))
    omega2 = forward.omega2.with_values(core_value=-(forward.omega1**2))
    rho1, rho2 = cluster_to_correlation(ClusterTargets(forward.omega1, omega2, 0.5))
    write_radial_csv(rho2, tmp_path / "rho2.csv")
    return rho1, "rho2.csv"


def test_jsonable():
    assert jsonable(math.inf) == "inf"
    assert jsonable(-math.inf) == "-inf"
    assert jsonable({"a": np.array([1.0, np.nan]), "b": np.int64(3), "c": (np.bool_(True),)}) == {
        "a": [1.0, "nan"],
        "b": 3,
        "c": [True],
    }


def test_missing_command_is_a_usage_error():
    assert main([]) == ExitCode.USAGE


def test_missing_input_is_a_usage_error(tmp_path):
    assert run(tmp_path / "out", "forward", str(tmp_path / "missing.json")) == ExitCode.USAGE


def test_forward_writes_its_outputs(tmp_path):
    source = write_input(tmp_path / "forward.json", FORWARD_INPUT)
    out = tmp_path / "out"
    assert run(out, "forward", source) == ExitCode.OK
    for name in ("omega2.csv", "omega2.json", "rho2.csv", "forward_report.json", "manifest.json"):
        assert (out / name).is_file()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "forward"
    assert manifest["status"] == "ok"
    assert manifest["seeds"] == [7]
    assert source in manifest["inputs"]
    # rho2 vanishes on the core up to the truncated order
    assert read_radial_csv(out / "rho2.csv").core_value == pytest.approx(0.0, abs=1e-9)


def test_forward_is_reproducible(tmp_path):
    source = write_input(tmp_path / "forward.json", FORWARD_INPUT)
    assert run(tmp_path / "first", "forward", source) == ExitCode.OK
    assert run(tmp_path / "second", "forward", source) == ExitCode.OK
    assert (tmp_path / "first" / "omega2.csv").read_bytes() == (tmp_path / "second" / "omega2.csv").read_bytes()


def test_solve_rejects_wrong_core(tmp_path):
    omega2 = RadialFunction.from_function(lambda r: np.full_like(r, 5e-8), 0.0, 1, 0.1, 2.0)
    write_radial_csv(omega2, tmp_path / "omega2.csv")
    source = write_input(tmp_path / "solve.json", {"targets_csv": "omega2.csv", "omega1": 1e-3, "N": 2})
    out = tmp_path / "out"
    assert run(out, "solve", source) == ExitCode.INADMISSIBLE
    assert not json.loads((out / "admissibility.json").read_text())["passed"]
    assert json.loads((out / "manifest.json").read_text())["status"] == "InadmissibleTargetsException"


def test_solve_refuses_large_density(tmp_path):
    rho1 = 0.1
    rho2 = RadialFunction.from_function(lambda r: np.full_like(r, 1.05 * rho1**2), 0.0, 1, 0.1, 2.0)
    write_radial_csv(rho2, tmp_path / "rho2.csv")
    source = write_input(tmp_path / "solve.json", {"targets_csv": "rho2.csv", "rho1": rho1, "N": 2})
    assert run(tmp_path / "out", "solve", source) == ExitCode.INADMISSIBLE


def test_solve_then_verify(tmp_path, rho2_targets):
    rho1, targets_csv = rho2_targets
    source = write_input(tmp_path / "solve.json", {"targets_csv": targets_csv, "rho1": rho1, "N": 2})
    solved = tmp_path / "solved"
    assert run(solved, "solve", source) == ExitCode.OK
    activity = json.loads((solved / "activity.json").read_text())
    assert activity["converged"]
    assert activity["z"] == pytest.approx(1e-3, rel=1e-10)
    assert activity["potential"]["stability"] == pytest.approx(0.1, rel=1e-6)
    assert json.loads((solved / "trace.json").read_text())["converged"]

    settings = write_input(tmp_path / "verify.json", {"N": 2})
    checked = tmp_path / "checked"
    assert run(checked, "verify", str(solved), "--config", settings) == ExitCode.OK
    report = json.loads((checked / "verify_report.json").read_text())
    assert report["passed"]
    assert report["failures"] == []


def test_verify_names_the_wrong_bin(tmp_path, rho2_targets):
    rho1, targets_csv = rho2_targets
    source = write_input(tmp_path / "solve.json", {"targets_csv": targets_csv, "rho1": rho1, "N": 2})
    solved = tmp_path / "solved"
    assert run(solved, "solve", source) == ExitCode.OK

    phi = read_radial_csv(solved / "potential.csv")
    values = phi.values.copy()
    values[3] *= 1.5
    write_radial_csv(phi.with_values(values), solved / "potential.csv")

    settings = write_input(tmp_path / "verify.json", {"N": 2})
    checked = tmp_path / "checked"
    assert run(checked, "verify", str(solved), "--config", settings) == ExitCode.VERIFICATION_FAILED
    report = json.loads((checked / "verify_report.json").read_text())
    assert not report["passed"]
    assert any(failure.startswith("bin 3 ") for failure in report["failures"])


def test_verify_needs_a_separate_output_directory(tmp_path):
    assert run(tmp_path, "verify", str(tmp_path)) == ExitCode.USAGE


def test_ursell_table(tmp_path):
    points = tmp_path / "points.csv"
    points.write_text("x\n0.0\n0.5\n0.9\n")
    out = tmp_path / "out"
    assert run(out, "ursell", str(points)) == ExitCode.OK
    lines = (out / "ursell_table.csv").read_text().splitlines()
    assert lines[0] == "m,boltzmann,connected_graphs,recurrence,gamma_inverse"
    assert len(lines) == 4
    last = lines[-1].split(",")
    assert float(last[2]) == pytest.approx(2.0)
    assert float(last[3]) == pytest.approx(2.0)


def test_probe_writes_its_report(tmp_path, rho2_targets):
    rho1, targets_csv = rho2_targets
    source = write_input(tmp_path / "probe.json", {"targets_csv": targets_csv, "rho1": rho1, "N": 2, "n_pairs": 2})
    out = tmp_path / "out"
    assert run(out, "probe", source) == ExitCode.OK
    report = json.loads((out / "probe_report.json").read_text())
    assert "constants" in report


def test_simulate_ideal_gas(tmp_path):
    settings = {"z": 0.5, "length": 6.0, "sweeps": 50, "equilibration_sweeps": 5, "block_length": 10, "n_chains": 2}
    source = write_input(tmp_path / "simulate.json", settings)
    out = tmp_path / "out"
    assert run(out, "simulate", source) == ExitCode.OK
    assert (out / "pair_histogram.csv").read_text().splitlines()[0] == "r,rho2,sigma"
    assert json.loads((out / "simulate_report.json").read_text())["z"] == 0.5
    assert not (out / "comparison.json").exists()


def assert_same_outputs(first, second, names):
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()
        assert file_digest(first / name) == file_digest(second / name)


def test_solve_is_reproducible(tmp_path, rho2_targets):
    rho1, targets_csv = rho2_targets
    source = write_input(tmp_path / "solve.json", {"targets_csv": targets_csv, "rho1": rho1, "N": 2})
    assert run(tmp_path / "first", "solve", source) == ExitCode.OK
    assert run(tmp_path / "second", "solve", source) == ExitCode.OK
    names = ("potential.csv", "potential.json", "targets.csv", "activity.json", "trace.json")
    assert_same_outputs(tmp_path / "first", tmp_path / "second", names)


def test_simulate_is_reproducible(tmp_path):
    write_radial_csv(g_to_phi(hard_core(1, 0.5, 2.0)), tmp_path / "rods.csv")
    settings = {
        "z": 0.5,
        "length": 6.0,
        "potential_csv": "rods.csv",
        "sweeps": 100,
        "equilibration_sweeps": 5,
        "block_length": 10,
        "n_chains": 2,
    }
    source = write_input(tmp_path / "simulate.json", settings)
    assert run(tmp_path / "first", "simulate", source) == ExitCode.OK
    assert run(tmp_path / "second", "simulate", source) == ExitCode.OK
    assert_same_outputs(tmp_path / "first", tmp_path / "second", ("pair_histogram.csv", "simulate_report.json"))


def test_solve_then_simulate_and_compare(tmp_path, rho2_targets):
    rho1, targets_csv = rho2_targets
    source = write_input(tmp_path / "solve.json", {"targets_csv": targets_csv, "rho1": rho1, "N": 2})
    solved = tmp_path / "solved"
    assert run(solved, "solve", source) == ExitCode.OK

    sampler = {"length": 10.0, "sweeps": 200, "equilibration_sweeps": 10, "block_length": 20, "n_chains": 2, "bin_width": 0.5}
    settings = write_input(tmp_path / "verify.json", {"N": 2, "simulate": sampler})
    checked = tmp_path / "checked"
    assert run(checked, "verify", str(solved), "--config", settings) in (ExitCode.OK, ExitCode.VERIFICATION_FAILED)
    assert (checked / "pair_histogram.csv").is_file()
    comparison = json.loads((checked / "comparison.json").read_text())
    assert comparison["dof"] >= 0
    assert 0.0 <= comparison["pass_fraction"] <= 1.0
    report = json.loads((checked / "verify_report.json").read_text())
    assert report["simulation_passed"] == comparison["passed"]
    # the deterministic part of the check does not depend on the sampler
    assert report["max_pair_error"] <= 1e-6
