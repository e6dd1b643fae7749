"""Command line tool tying the inverse solver, the forward check and the sampler together.

Usage:
    python cli.py [--out DIR] [--seed N] [--threads N] [--force] [--log-level LEVEL] COMMAND INPUT

Commands:
    solve     JSON {targets_csv, rho1 | omega1, r, d, N, quadrature, tol, max_iter, seed}
    forward   JSON {z, potential_csv | hard_core, N, quadrature}
    simulate  JSON {z, length, dimension, boundary, potential_csv, sweeps, .., targets_csv, rho1 | omega1}
    verify    a solve output directory, optionally --config JSON {N, quadrature, simulate}
    ursell    a csv of points, optionally --potential CSV
    probe     JSON {targets_csv, rho1 | omega1, r, N, quadrature, n_pairs}

Exit codes are listed in `enums.ExitCode`.
"""

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

import config
from config import VERSION
from enums import Boundary, Command, ExitCode
from expansion import ActivityGuardException, QuadratureSpec, QuadratureUnderResolvedException, forward_cluster
from gcmc import SimulationConfig, compare_to_targets, simulate, write_histogram_csv
from pairfn import (
    ClusterTargets,
    GridMismatchException,
    HardCorePotential,
    NonPhysicalException,
    RadialFunction,
    cluster_to_correlation,
    correlation_to_cluster,
    hard_core,
    phi_to_g,
    read_radial_csv,
    stability_bound,
    write_radial_csv,
)
from solver import (
    DomainConstants,
    InadmissibleTargetsException,
    NoConvergenceException,
    contraction_probe,
    solve_inverse,
)
from ursell import Configuration, OrderTooLargeException, debug_table
from utils import file_digest


class UsageException(Exception):
    """Command line arguments or input files are missing or malformed."""


class ArgumentParser(argparse.ArgumentParser):
    """Reports bad arguments as `UsageException` so they map to the usage exit code."""

    def error(self, message: str):
        raise UsageException(message)


def jsonable(value: Any) -> Any:
    """Converts numpy values, enums and non finite floats to plain json values."""
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [jsonable(item) for item in value.tolist()]
    if isinstance(value, Enum):
        return str(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")


def load_json(path: Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageException(f"Missing input file {path}.")
    except json.JSONDecodeError as error:
        raise UsageException(f"Invalid json in {path}: {error}.")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Everything needed to reproduce the numbers of one output directory."""

    command: str
    config: dict[str, Any] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    version: str = VERSION
    seeds: list[int] = field(default_factory=list)
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    status: Optional[str] = None


class RunContext:
    """Output directory of one command. Writes its manifest when the command ends, however it ends."""

    def __init__(self, command: Command, args: argparse.Namespace):
        self.out = Path(args.out)
        self.args = args
        self.manifest = RunManifest(str(command))

    def input(self, path: Path) -> Path:
        """Checks that an input exists and records its digest."""
        path = Path(path)
        if not path.is_file():
            raise UsageException(f"Missing input file {path}.")
        self.manifest.inputs[str(path)] = file_digest(path)
        return path

    def radial_input(self, path: Path) -> RadialFunction:
        path = self.input(path)
        self.input(path.with_suffix(".json"))
        try:
            return read_radial_csv(path)
        except (KeyError, ValueError, AssertionError) as error:
            raise UsageException(f"Malformed radial function {path}: {error}.")

    def seed(self, options: dict[str, Any]) -> int:
        seed = self.args.seed if self.args.seed is not None else int(options.get("seed", config.SEED))
        self.manifest.seeds.append(seed)
        return seed

    def threads(self, options: dict[str, Any]) -> int:
        return self.args.threads if self.args.threads is not None else int(options.get("threads", config.THREADS))

    def path(self, name: str) -> Path:
        return self.out / name

    def __enter__(self) -> "RunContext":
        self.out.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, traceback) -> bool:
        self.manifest.finished = _now()
        self.manifest.status = "ok" if exc_type is None else exc_type.__name__
        write_json(self.path("manifest.json"), self.manifest.__dict__)
        return False


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def _quadrature(run: RunContext, options: dict[str, Any]) -> QuadratureSpec:
    try:
        return QuadratureSpec.from_dict(
            options.get("quadrature", {}), seed=run.seed(options), workers=run.threads(options)
        )
    except (TypeError, ValueError, AssertionError) as error:
        raise UsageException(f"Invalid quadrature settings: {error}.")


def _targets(run: RunContext, options: dict[str, Any], base: Path) -> ClusterTargets:
    """ClusterTargets from a rho2 csv with rho1, or an omega2 csv with omega1."""
    if "targets_csv" not in options:
        raise UsageException("The input needs targets_csv.")
    function = run.radial_input(_resolve(base, options["targets_csv"]))
    if "d" in options and int(options["d"]) != function.dimension:
        raise UsageException(f"d = {options['d']} does not match the targets' dimension {function.dimension}.")
    r = float(options.get("r", config.SMALLNESS_RATIO))
    if "rho1" in options:
        return correlation_to_cluster(float(options["rho1"]), function, r)
    if "omega1" in options:
        return ClusterTargets(float(options["omega1"]), function, r)
    raise UsageException("The input needs rho1 or omega1.")


def _potential(run: RunContext, options: dict[str, Any], base: Path) -> RadialFunction:
    """Mayer bond g of the potential csv, or of a pure hard core when none is given."""
    if "potential_csv" in options:
        return phi_to_g(run.radial_input(_resolve(base, options["potential_csv"])))
    grid = options.get("hard_core", {})
    return hard_core(
        int(grid.get("d", options.get("dimension", config.DIMENSION))),
        float(grid.get("delta", config.GRID_SPACING)),
        float(grid.get("r_max", config.SUPPORT_RADIUS)),
    )


def _write_function(run: RunContext, name: str, function: RadialFunction) -> None:
    write_radial_csv(function, run.path(name))


def _potential_summary(potential: HardCorePotential) -> dict[str, Any]:
    return {"a": potential.a, "norm": potential.norm.to_dict(), "stability": stability_bound(potential.g)}


def cmd_solve(args: argparse.Namespace) -> ExitCode:
    """Solves the inverse problem and writes potential.csv, activity.json, trace.json and targets.csv."""
    with RunContext(Command.SOLVE, args) as run:
        source = run.input(Path(args.input))
        options = load_json(source)
        targets = _targets(run, options, source.parent)
        q = _quadrature(run, options)
        r = float(options.get("r", config.SMALLNESS_RATIO))
        order = int(options.get("N", config.TRUNCATION_ORDER))
        tol = float(options.get("tol", config.TOLERANCE))
        max_iter = int(options.get("max_iter", config.MAX_ITERATIONS))
        run.manifest.config = {
            **options,
            "r": r,
            "N": order,
            "tol": tol,
            "max_iter": max_iter,
            "quadrature": q.to_dict(),
            "force": args.force,
        }
        _write_function(run, "targets.csv", targets.omega2)

        try:
            result = solve_inverse(targets, r, order, q, tol, max_iter, force=args.force)
        except InadmissibleTargetsException as error:
            write_json(run.path("admissibility.json"), error.report.to_dict())
            raise
        except NoConvergenceException as error:
            write_json(run.path("trace.json"), error.trace.to_dict())
            raise

        _write_function(run, "potential.csv", result.phi)
        write_json(
            run.path("activity.json"),
            {
                "z": result.z,
                "z0": targets.omega1,
                "rho1": targets.omega1,
                "r": r,
                "N": order,
                "iterations": len(result.trace.entries),
                "converged": result.trace.converged,
                "constants": result.trace.constants.to_dict(),
                "u1": result.u1,
                "u2": result.u2,
                "admissibility": result.admissibility.to_dict(),
                "potential": _potential_summary(HardCorePotential(result.point.g)),
            },
        )
        write_json(run.path("trace.json"), result.trace.to_dict())
        logging.info(f"Solved: z = {result.z:.12g} after {len(result.trace.entries)} iterations.")
    return ExitCode.OK


def cmd_forward(args: argparse.Namespace) -> ExitCode:
    """Writes omega1 and its errors to forward_report.json, omega2.csv and rho2.csv."""
    with RunContext(Command.FORWARD, args) as run:
        source = run.input(Path(args.input))
        options = load_json(source)
        if "z" not in options:
            raise UsageException("The input needs z.")
        g = _potential(run, options, source.parent)
        q = _quadrature(run, options)
        order = int(options.get("N", config.TRUNCATION_ORDER))
        run.manifest.config = {**options, "N": order, "quadrature": q.to_dict(), "force": args.force}

        result = forward_cluster(float(options["z"]), g, order, q, force=args.force)
        _, rho2 = cluster_to_correlation(ClusterTargets(result.omega1, result.omega2))
        _write_function(run, "omega2.csv", result.omega2)
        _write_function(run, "rho2.csv", rho2)
        write_json(run.path("forward_report.json"), result.to_dict())
    return ExitCode.OK


SIMULATION_KEYS: tuple[str, ...] = (
    "sweeps",
    "equilibration_sweeps",
    "max_displacement",
    "bin_width",
    "n_chains",
    "block_length",
)


def _simulation_config(run: RunContext, options: dict[str, Any], base: Path, **overrides: Any) -> SimulationConfig:
    for key in ("z", "length"):
        if key not in options and key not in overrides:
            raise UsageException(f"The simulation input needs {key}.")
    potential = (
        HardCorePotential.from_phi(run.radial_input(_resolve(base, options["potential_csv"])))
        if "potential_csv" in options
        else None
    )
    dimension = potential.g.dimension if potential is not None else int(options.get("dimension", config.DIMENSION))
    values = {key: options[key] for key in SIMULATION_KEYS if key in options}
    if "move_probabilities" in options:
        values["move_probabilities"] = tuple(float(p) for p in options["move_probabilities"])
    values.update(overrides)
    try:
        return SimulationConfig(
            dimension=dimension,
            length=float(values.pop("length", options.get("length"))),
            z=float(values.pop("z", options.get("z"))),
            potential=potential,
            boundary=Boundary.parse(options.get("boundary", "periodic")),
            seed=run.seed(options),
            **values,
        )
    except (AssertionError, TypeError, ValueError) as error:
        raise UsageException(f"Invalid simulation settings: {error}.")


def _simulate_and_compare(run: RunContext, options: dict[str, Any], base: Path, targets: Optional[ClusterTargets]) -> Optional[bool]:
    cfg = _simulation_config(run, options, base)
    workers = run.threads(options)
    result = simulate(cfg, workers)
    write_histogram_csv(result.histogram, run.path("pair_histogram.csv"))
    write_json(run.path("simulate_report.json"), result.to_dict())
    if targets is None:
        return None
    doubled = None
    if options.get("doubled"):
        doubled = simulate(_simulation_config(run, options, base, length=2.0 * cfg.length), workers)
    report = compare_to_targets(result, targets, doubled)
    write_json(run.path("comparison.json"), report.to_dict())
    return report.passed


def cmd_simulate(args: argparse.Namespace) -> ExitCode:
    """Runs the sampler, writes pair_histogram.csv (r,rho2,sigma) and, with targets, comparison.json."""
    with RunContext(Command.SIMULATE, args) as run:
        source = run.input(Path(args.input))
        options = load_json(source)
        targets = _targets(run, options, source.parent) if "targets_csv" in options else None
        run.manifest.config = dict(options)
        _simulate_and_compare(run, options, source.parent, targets)
    return ExitCode.OK


def cmd_verify(args: argparse.Namespace) -> ExitCode:
    """Recomputes the cluster functions of a solved (z, Phi) and compares them to the targets.

    Writes verify_report.json naming every bin off by more than the tolerance.
    """
    solve_dir = Path(args.input)
    if Path(args.out).resolve() == solve_dir.resolve():
        raise UsageException("verify needs an output directory other than the solve directory.")
    if not (solve_dir / "manifest.json").is_file():
        raise UsageException(f"No manifest in {solve_dir}, is it a solve output directory?")

    with RunContext(Command.VERIFY, args) as run:
        manifest = load_json(run.input(solve_dir / "manifest.json"))
        activity = load_json(run.input(solve_dir / "activity.json"))
        phi = run.radial_input(solve_dir / "potential.csv")
        omega2 = run.radial_input(solve_dir / "targets.csv")
        options = load_json(run.input(Path(args.config))) if args.config else {}
        solved = manifest.get("config", {})
        solved_quadrature = solved.get("quadrature", {})
        q = _quadrature(
            run,
            {"quadrature": solved_quadrature, "seed": solved_quadrature.get("seed", config.SEED), **options},
        )
        order = int(options.get("N", config.VERIFY_TRUNCATION_ORDER))
        run.manifest.config = {**options, "N": order, "quadrature": q.to_dict(), "solve_dir": str(solve_dir)}
        targets = ClusterTargets(float(activity["rho1"]), omega2, float(activity["r"]))

        result = forward_cluster(float(activity["z"]), phi_to_g(phi), order, q, force=args.force)
        rho1 = targets.omega1
        density_error = abs(result.omega1 - rho1) / rho1
        failures = []
        if density_error > config.DENSITY_RELATIVE_TOLERANCE:
            failures.append(f"rho1 relative error {density_error:.3e} above {config.DENSITY_RELATIVE_TOLERANCE}")
        # rho2 = omega2 + omega1^2, errors in units of rho1^2. The core is only reported: Q fixes g there.
        shift = result.omega1**2 - rho1**2
        bin_errors = np.abs(result.omega2.values + shift - omega2.values) / rho1**2
        core_error = abs(result.omega2.core_value + shift - omega2.core_value) / rho1**2
        for index in np.flatnonzero(bin_errors > config.PAIR_ABSOLUTE_TOLERANCE):
            failures.append(f"bin {index} (r = {omega2.radii[index]:.6g}): error {bin_errors[index]:.3e} rho1^2")

        simulation_passed = None
        if "simulate" in options:
            simulate_options = {"z": activity["z"], "potential_csv": str((solve_dir / "potential.csv").resolve()), **options["simulate"]}
            simulation_passed = _simulate_and_compare(run, simulate_options, solve_dir, targets)
            if simulation_passed is False:
                failures.append("simulation disagrees with the targets")

        write_json(
            run.path("verify_report.json"),
            {
                "passed": not failures,
                "failures": failures,
                "rho1": rho1,
                "omega1": result.omega1,
                "density_relative_error": density_error,
                "max_pair_error": float(bin_errors.max(initial=0.0)),
                "core_error": core_error,
                "pair_errors": bin_errors,
                "forward": result.to_dict(),
                "simulation_passed": simulation_passed,
            },
        )
    for failure in failures:
        logging.error(f"Verification failed: {failure}.")
    return ExitCode.OK if not failures else ExitCode.VERIFICATION_FAILED


def _read_points(path: Path) -> Configuration:
    with open(path, newline="") as handle:
        rows = [row for row in csv.reader(handle) if row]
    try:
        values = [[float(v) for v in row] for row in rows[1:]]
    except ValueError as error:
        raise UsageException(f"Malformed points file {path}: {error}.")
    if not values:
        raise UsageException(f"No points in {path}.")
    return Configuration(np.array(values))


def cmd_ursell(args: argparse.Namespace) -> ExitCode:
    """Writes ursell_table.csv: per prefix of the points, the Boltzmann factor and every Ursell evaluator."""
    with RunContext(Command.URSELL, args) as run:
        points = _read_points(run.input(Path(args.input)))
        g = (
            phi_to_g(run.radial_input(Path(args.potential)))
            if args.potential
            else hard_core(points.dimension, config.GRID_SPACING, 1.0)
        )
        if g.dimension != points.dimension:
            raise UsageException(f"Points of dimension {points.dimension} for a potential of dimension {g.dimension}.")
        run.manifest.config = {"points": args.input, "potential": args.potential}
        rows = debug_table(g, points)
        columns = ["m", "boltzmann", "connected_graphs", "recurrence", "gamma_inverse"]
        with open(run.path("ursell_table.csv"), "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow(["" if row[c] is None else repr(row[c]) for c in columns])
    return ExitCode.OK


def cmd_probe(args: argparse.Namespace) -> ExitCode:
    """Writes probe_report.json with the largest empirical contraction ratio of Q."""
    with RunContext(Command.PROBE, args) as run:
        source = run.input(Path(args.input))
        options = load_json(source)
        targets = _targets(run, options, source.parent)
        q = _quadrature(run, options)
        order = int(options.get("N", config.TRUNCATION_ORDER))
        n_pairs = int(options.get("n_pairs", config.PROBE_PAIRS))
        run.manifest.config = {**options, "N": order, "n_pairs": n_pairs, "quadrature": q.to_dict()}
        k = DomainConstants(targets.r, targets.omega1)
        report = contraction_probe(targets, k, order, q, n_pairs, q.seed, run.threads(options))
        write_json(run.path("probe_report.json"), {**report.to_dict(), "constants": k.to_dict()})
    return ExitCode.OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="cli.py", description="Inverse solver for hard core Gibbs fields.")
    parser.add_argument("--out", default="out", help="Output directory.")
    parser.add_argument("--seed", type=int, default=None, help="Seed of every random stream.")
    parser.add_argument("--threads", type=int, default=None, help="Largest worker count.")
    parser.add_argument("--force", action="store_true", help="Override the smallness guards (logged).")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="Logging level.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)
    for command in (Command.SOLVE, Command.FORWARD, Command.SIMULATE, Command.PROBE):
        commands.add_parser(str(command)).add_argument("input", help="JSON input file.")
    verify = commands.add_parser(str(Command.VERIFY))
    verify.add_argument("input", help="Output directory of a solve run.")
    verify.add_argument("--config", default=None, help="JSON with N, quadrature and simulate settings.")
    ursell = commands.add_parser(str(Command.URSELL))
    ursell.add_argument("input", help="CSV of points, one per row, with a header.")
    ursell.add_argument("--potential", default=None, help="Potential CSV, pure hard core if omitted.")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageException as error:
        logging.error(f"Usage: {error}")
        return ExitCode.USAGE
    logging.basicConfig(level=args.log_level.upper(), format=config.LOG_FORMAT, force=True)
    if args.force:
        logging.warning("--force given: smallness guards are overridden.")

    handler = getattr(sys.modules[__name__], f"cmd_{Command.parse(args.command)}")
    try:
        return int(handler(args))
    except UsageException as error:
        logging.error(f"Usage: {error}")
        return ExitCode.USAGE
    except (InadmissibleTargetsException, ActivityGuardException) as error:
        logging.error(str(error))
        return ExitCode.INADMISSIBLE
    except NoConvergenceException as error:
        logging.error(str(error))
        return ExitCode.NO_CONVERGENCE
    except (
        NonPhysicalException,
        QuadratureUnderResolvedException,
        GridMismatchException,
        OrderTooLargeException,
    ) as error:
        logging.error(str(error))
        return ExitCode.FAILURE


if __name__ == "__main__":
    sys.exit(main())
