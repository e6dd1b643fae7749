"""Inverse solver: finds (z, g) with forward_cluster(z, g) equal to given cluster targets.

The fixed point of
    Q(z, g) = (omega1 - z^2 A(z, g),  omega2 / z^2 - z B(z, g) outside the core, -1 inside)
is searched by plain iteration on D = [a1 z0, a2 z0] x {||g|| <= c}, where Q contracts in
    rho((z1, g1), (z2, g2)) = h |z1 - z2| / z0 + ||g1 - g2||.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

import config
from enums import Stream
from expansion import ActivityGuardException, QuadratureSpec, SeriesResult, series_a, series_b
from pairfn import (
    AdmissibilityReport,
    ClusterTargets,
    GridMismatchException,
    NonPhysicalException,
    NormBracket,
    RadialFunction,
    check_admissible,
    g_to_phi,
    packing_norm,
)
from utils import make_rng, random_bin_values


class InadmissibleTargetsException(Exception):
    """Targets fail the admissibility checks and are rejected before iterating.

    Fields:
        `report (AdmissibilityReport)`: The failing report.
    """

    def __init__(self, report: AdmissibilityReport):
        super().__init__("Inadmissible targets: " + " ".join(report.reasons))
        self.report = report


class NoConvergenceException(Exception):
    """The iteration did not reach the tolerance within the allowed number of steps.

    Fields:
        `trace (IterationTrace)`: Everything the iteration did.
        `last_distance (float)`: rho distance of the last step.
        `left_domain (bool)`: Whether an iterate failed the domain check.
    """

    def __init__(self, message: str, trace: "IterationTrace"):
        super().__init__(message)
        self.trace = trace
        self.last_distance = trace.entries[-1].distance if trace.entries else math.inf
        self.left_domain = trace.left_domain


@dataclass(frozen=True)
class DomainConstants:
    """Constants of the domain D and the metric rho, all derived from r and z0."""

    r: float
    z0: float

    def __post_init__(self):
        assert 0.0 < self.r < 1.0
        assert self.z0 > 0.0

    @property
    def c(self) -> float:
        return (self.r + 2.0) / 3.0

    @property
    def a1(self) -> float:
        return math.sqrt(2.0 * self.r / (self.r + 1.0))

    @property
    def a2(self) -> float:
        return 2.0

    @property
    def h(self) -> float:
        return 12.0 * self.a2 / self.a1**4

    @property
    def interval(self) -> tuple[float, float]:
        return self.a1 * self.z0, self.a2 * self.z0

    def to_dict(self) -> dict[str, float]:
        return {"r": self.r, "z0": self.z0, "c": self.c, "a1": self.a1, "a2": self.a2, "h": self.h}


@dataclass(frozen=True, eq=False)
class SolverPoint:
    z: float
    g: RadialFunction

    def __post_init__(self):
        assert self.z > 0.0
        assert self.g.core_value == -1.0


@dataclass(frozen=True)
class DomainReport:
    """Membership of a point in D and the inequalities keeping Q(D) inside D.

    The inequalities need the suprema u1 of |A| and u2 of ||B|| over D. Without them they are
    reported as None and do not affect `passed`.
    """

    passed: bool
    in_interval: bool
    norm: NormBracket
    norm_status: str
    inequalities: dict[str, Optional[bool]]
    u1: Optional[float]
    u2: Optional[float]
    reasons: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "norm": self.norm.to_dict(), "reasons": list(self.reasons)}


def domain_check(
    p: SolverPoint, k: DomainConstants, u1: Optional[float] = None, u2: Optional[float] = None
) -> DomainReport:
    """Checks z in [a1 z0, a2 z0], the norm ball ||g|| <= c and, given u1 and u2,
        z0 + (a2 z0)^2 u1 <= a2 z0,   z0 - (a2 z0)^2 u1 >= a1 z0,   r / a1^2 + a2 z0 u2 <= c.
    Never raises.
    """
    reasons = []
    low, high = k.interval
    in_interval = low <= p.z <= high
    if not in_interval:
        reasons.append(f"z = {p.z:.6g} outside [{low:.6g}, {high:.6g}].")

    bracket = packing_norm(p.g)
    if bracket.upper <= k.c:
        status = "inside"
    elif bracket.lower > k.c:
        status = "outside"
        reasons.append(f"||g|| >= {bracket.lower:.6g} above c = {k.c:.6g}.")
    else:
        status = "inconclusive"
        reasons.append(f"||g|| bracket [{bracket.lower:.6g}, {bracket.upper:.6g}] straddles c = {k.c:.6g}.")

    inequalities: dict[str, Optional[bool]] = {"upper_activity": None, "lower_activity": None, "norm_ball": None}
    if u1 is not None:
        spread = (k.a2 * k.z0) ** 2 * u1
        inequalities["upper_activity"] = k.z0 + spread <= k.a2 * k.z0
        inequalities["lower_activity"] = k.z0 - spread >= k.a1 * k.z0
    if u2 is not None:
        inequalities["norm_ball"] = k.r / k.a1**2 + k.a2 * k.z0 * u2 <= k.c
    for name, holds in inequalities.items():
        if holds is False:
            reasons.append(f"Inequality {name} fails with u1 = {u1}, u2 = {u2}.")

    passed = in_interval and status == "inside" and all(v is not False for v in inequalities.values())
    return DomainReport(passed, in_interval, bracket, status, inequalities, u1, u2, tuple(reasons))


def metric_rho(p1: SolverPoint, p2: SolverPoint, k: DomainConstants) -> float:
    """h |z1 - z2| / z0 + ||g1 - g2|| with the upper norm bracket."""
    return k.h * abs(p1.z - p2.z) / k.z0 + packing_norm(p1.g - p2.g).upper


@dataclass(frozen=True, eq=False)
class QEvaluation:
    point: SolverPoint
    a: SeriesResult
    b: SeriesResult

    @property
    def b_norm(self) -> float:
        """||B|| outside the core."""
        return packing_norm(self.b.value).upper


def evaluate_q(
    p: SolverPoint,
    targets: ClusterTargets,
    k: DomainConstants,
    order: int = config.TRUNCATION_ORDER,
    q: Optional[QuadratureSpec] = None,
) -> QEvaluation:
    """Q(p) together with the series it was computed from.

    Raises:
        `GridMismatchException`: If g and the targets live on different grids.
        `NonPhysicalException`: If z' <= 0 or some g' sample is <= -1.
    """
    if not p.g.same_grid(targets.omega2):
        raise GridMismatchException("Iterate and targets are on different grids.")
    check = domain_check(p, k)
    if not check.passed:
        logging.warning(f"Q applied outside D: {' '.join(check.reasons)}")

    a = series_a(p.z, p.g, order, q)
    b = series_b(p.z, p.g, order, q)
    z_next = targets.omega1 - p.z**2 * a.value
    if not z_next > 0.0:
        raise NonPhysicalException(f"Iteration produced the activity {z_next} <= 0.")
    values = targets.omega2.values / p.z**2 - p.z * b.value.values
    bad = np.flatnonzero(values <= -1.0)
    if bad.size:
        radius = float(p.g.radii[bad[0]])
        raise NonPhysicalException(f"Iteration produced g = {values[bad[0]]} <= -1 at radius {radius}.", radius)
    return QEvaluation(SolverPoint(z_next, p.g.with_values(values, -1.0)), a, b)


def apply_q(
    p: SolverPoint,
    targets: ClusterTargets,
    k: DomainConstants,
    order: int = config.TRUNCATION_ORDER,
    q: Optional[QuadratureSpec] = None,
) -> SolverPoint:
    return evaluate_q(p, targets, k, order, q).point


def initial_point(targets: ClusterTargets) -> SolverPoint:
    """(z0, omega2 / z0^2 outside the core, -1 inside)."""
    z0 = targets.omega1
    values = targets.omega2.values / z0**2
    bad = np.flatnonzero(values <= -1.0)
    if bad.size:
        radius = float(targets.omega2.radii[bad[0]])
        raise NonPhysicalException(f"Initial g = {values[bad[0]]} <= -1 at radius {radius}.", radius)
    return SolverPoint(z0, targets.omega2.with_values(values, -1.0))


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    z: float
    distance: float
    in_interval: bool
    norm_upper: float
    domain_passed: bool
    a_truncation: float
    a_quadrature: float
    b_truncation: float
    b_quadrature: float

    def __post_init__(self):
        assert self.distance >= 0


@dataclass
class IterationTrace:
    constants: DomainConstants
    entries: list[TraceEntry] = field(default_factory=list)
    converged: bool = False

    @property
    def left_domain(self) -> bool:
        return any(not entry.domain_passed for entry in self.entries)

    @property
    def distances(self) -> list[float]:
        return [entry.distance for entry in self.entries]

    def to_dict(self) -> dict[str, Any]:
        return {
            "constants": self.constants.to_dict(),
            "converged": self.converged,
            "left_domain": self.left_domain,
            "entries": [asdict(entry) for entry in self.entries],
        }


@dataclass(frozen=True, eq=False)
class SolveResult:
    """The small solution: activity, potential and how it was reached."""

    z: float
    phi: RadialFunction
    point: SolverPoint
    trace: IterationTrace
    admissibility: AdmissibilityReport
    u1: float
    u2: float


def check_smallness(z0: float, force: bool = False) -> None:
    logging.info(f"Smallness guard: z0 = {z0:.6g} (limit {config.SMALLNESS_GUARD}).")
    if z0 > config.SMALLNESS_GUARD:
        if not force:
            raise ActivityGuardException(
                f"z0 = {z0} is above the smallness guard {config.SMALLNESS_GUARD}.", z0, config.SMALLNESS_GUARD
            )
        logging.warning(f"z0 = {z0} above the smallness guard, continuing because of --force.")


def solve_inverse(
    targets: ClusterTargets,
    r: Optional[float] = None,
    order: int = config.TRUNCATION_ORDER,
    q: Optional[QuadratureSpec] = None,
    tol: float = config.TOLERANCE,
    max_iter: int = config.MAX_ITERATIONS,
    force: bool = False,
) -> SolveResult:
    """Iterates p <- Q(p) from `initial_point` until rho(Q(p), p) <= tol.

    u1 and u2 for the domain checks are the running suprema of |A| and ||B|| over the iterates.

    Raises:
        `InadmissibleTargetsException`: If `check_admissible` fails.
        `ActivityGuardException`: If z0 is above the smallness guard and `force` is off.
        `NoConvergenceException`: After `max_iter` steps without reaching `tol`.
        `NonPhysicalException`: If an iterate has no finite potential.
    """
    r = targets.r if r is None else r
    report = check_admissible(targets, r)
    if not report.passed:
        raise InadmissibleTargetsException(report)
    check_smallness(targets.omega1, force)

    k = DomainConstants(r, targets.omega1)
    trace = IterationTrace(k)
    p = initial_point(targets)
    u1, u2 = 0.0, 0.0
    for iteration in range(1, max_iter + 1):
        step = evaluate_q(p, targets, k, order, q)
        u1 = max(u1, abs(step.a.value))
        u2 = max(u2, step.b_norm)
        distance = metric_rho(step.point, p, k)
        check = domain_check(step.point, k, u1, u2)
        trace.entries.append(
            TraceEntry(
                iteration,
                step.point.z,
                distance,
                check.in_interval,
                check.norm.upper,
                check.passed,
                step.a.truncation_error_estimate,
                step.a.quadrature_error_estimate,
                step.b.truncation_error_estimate,
                step.b.quadrature_error_estimate,
            )
        )
        logging.info(
            f"Iteration {iteration}: z = {step.point.z:.12g}, rho distance = {distance:.3e}, "
            f"in D = {check.passed}."
        )
        if not check.passed:
            logging.warning(f"Iterate {iteration} fails the domain check: {' '.join(check.reasons)}")
        p = step.point
        if distance <= tol:
            trace.converged = True
            logging.info(f"Converged after {iteration} iterations to the unique small solution.")
            return SolveResult(p.z, g_to_phi(p.g), p, trace, report, u1, u2)

    raise NoConvergenceException(
        f"No convergence after {max_iter} iterations, last rho distance {trace.entries[-1].distance:.3e}"
        f"{', iterates left D' if trace.left_domain else ''}.",
        trace,
    )


# region DIAGNOSTICS
def random_domain_point(rng: np.random.Generator, template: RadialFunction, k: DomainConstants) -> SolverPoint:
    """z uniform on the activity interval, g random with ||g|| <= c (scaled by a uniform fraction)."""
    z = rng.uniform(*k.interval)
    values = random_bin_values(rng, template.n_bins)
    g = template.with_values(values, -1.0)
    norm = packing_norm(g).upper
    if norm > 0.0:
        g = g.with_values(values * (k.c * rng.uniform(0.05, 1.0) / norm))
    return SolverPoint(z, g)


def contraction_ratio(
    p1: SolverPoint,
    p2: SolverPoint,
    targets: ClusterTargets,
    k: DomainConstants,
    order: int = config.TRUNCATION_ORDER,
    q: Optional[QuadratureSpec] = None,
) -> tuple[Optional[float], QEvaluation, QEvaluation]:
    """rho(Q p1, Q p2) / rho(p1, p2), None for identical points."""
    first = evaluate_q(p1, targets, k, order, q)
    second = evaluate_q(p2, targets, k, order, q)
    before = metric_rho(p1, p2, k)
    if before == 0.0:
        return None, first, second
    return metric_rho(first.point, second.point, k) / before, first, second


@dataclass(frozen=True)
class ProbeReport:
    ratios: tuple[float, ...]
    skipped: int
    max_ratio: float
    contracting: bool
    small_regime: bool
    u1: float
    u2: float

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "ratios": list(self.ratios)}


def contraction_probe(
    targets: ClusterTargets,
    k: DomainConstants,
    order: int = config.TRUNCATION_ORDER,
    q: Optional[QuadratureSpec] = None,
    n_pairs: int = config.PROBE_PAIRS,
    seed: int = config.SEED,
    workers: int = config.THREADS,
) -> ProbeReport:
    """Largest empirical contraction ratio of Q over random pairs of points of D.

    Pair i is drawn from the stream (seed, PROBE, i). A large z0 is reported, never rejected.
    """

    def probe(index: int):
        rng = make_rng(seed, Stream.PROBE, index)
        p1 = random_domain_point(rng, targets.omega2, k)
        p2 = random_domain_point(rng, targets.omega2, k)
        return contraction_ratio(p1, p2, targets, k, order, q)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(probe, range(n_pairs)))

    ratios = tuple(ratio for ratio, _, _ in results if ratio is not None)
    u1 = max((abs(e.a.value) for _, *pair in results for e in pair), default=0.0)
    u2 = max((e.b_norm for _, *pair in results for e in pair), default=0.0)
    max_ratio = max(ratios, default=0.0)
    small = k.z0 <= config.SMALLNESS_GUARD
    contracting = max_ratio <= config.CONTRACTION_BOUND
    logging.info(f"Contraction probe: max ratio {max_ratio:.4g} over {len(ratios)} pairs, u1 = {u1:.4g}, u2 = {u2:.4g}.")
    if not contracting:
        logging.warning(f"Max ratio {max_ratio:.4g} above {config.CONTRACTION_BOUND}, small regime = {small}.")
    return ProbeReport(ratios, n_pairs - len(ratios), max_ratio, contracting, small, u1, u2)


def measure_constants(
    targets: ClusterTargets,
    k: DomainConstants,
    order: int = config.TRUNCATION_ORDER,
    q: Optional[QuadratureSpec] = None,
    n_points: int = 10,
    seed: int = config.SEED,
) -> tuple[float, float]:
    """Suprema of |A| and ||B|| over random points of D."""
    u1, u2 = 0.0, 0.0
    for index in range(n_points):
        p = random_domain_point(make_rng(seed, Stream.PROBE, index, 1), targets.omega2, k)
        a = series_a(p.z, p.g, order, q)
        b = series_b(p.z, p.g, order, q)
        u1 = max(u1, abs(a.value))
        u2 = max(u2, packing_norm(b.value).upper)
    return u1, u2


# endregion
