"""Radially symmetric pair functions with a unit hard core.

Holds the Mayer bond g, the potential Phi, the cluster targets and the packing norm
sup over unit-separated point sets outside the unit ball of sum |f(x)|, together with the
admissibility checks and the csv/json persistence of radial functions.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.spatial import cKDTree

import config


class NonPhysicalException(Exception):
    """A Mayer bond sample at or below -1 (or a non positive activity) was produced,
    for which no finite potential exists.

    Fields:
        `radius (Optional[float])`: The radius of the offending sample, if there is one.
    """

    def __init__(self, message: str, radius: Optional[float] = None):
        super().__init__(message)
        self.radius = radius


class GridMismatchException(Exception):
    """Two radial functions that have to be combined don't share dimension,
    bin width and support radius."""


def bin_count(delta: float, r_max: float) -> int:
    """Number of bins of width `delta` covering [1, r_max]."""
    return max(math.ceil(round((r_max - 1.0) / delta, 9)), 0)


def unit_ball_volume(dimension: int) -> float:
    """Volume of the unit ball in `dimension` dimensions (2 for d = 1)."""
    return math.pi ** (dimension / 2) / math.gamma(dimension / 2 + 1)


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """A function of |x| on R^d that is constant on the open unit ball,
    piecewise constant on bins of width `delta` up to `r_max` and zero beyond.

    Fields:
        `dimension (int)`: d, one of 1, 2, 3.
        `delta (float)`: Bin width.
        `r_max (float)`: Support radius, at least 1.
        `values (np.ndarray)`: One finite sample per bin, bin i centred at 1 + (i + 1/2) * delta.
        Copied and made read only on construction.
        `core_value (float)`: Value on |x| < 1. May be +inf for a potential.
    """

    dimension: int
    delta: float
    r_max: float
    values: np.ndarray
    core_value: float

    def __post_init__(self):
        assert self.dimension in (1, 2, 3)
        assert self.delta > 0
        assert self.r_max >= 1
        values = np.array(self.values, dtype=float).reshape(-1)
        assert values.size == bin_count(self.delta, self.r_max)
        assert np.all(np.isfinite(values))
        assert not math.isnan(self.core_value)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "core_value", float(self.core_value))

    @classmethod
    def zeros(
        cls,
        dimension: int = config.DIMENSION,
        delta: float = config.GRID_SPACING,
        r_max: float = config.SUPPORT_RADIUS,
        core_value: float = 0.0,
    ) -> "RadialFunction":
        return cls(dimension, delta, r_max, np.zeros(bin_count(delta, r_max)), core_value)

    @classmethod
    def from_function(
        cls,
        function: Callable[[np.ndarray], np.ndarray],
        core_value: float,
        dimension: int = config.DIMENSION,
        delta: float = config.GRID_SPACING,
        r_max: float = config.SUPPORT_RADIUS,
    ) -> "RadialFunction":
        """Samples `function` at the bin centres of the given grid."""
        template = cls.zeros(dimension, delta, r_max)
        return template.with_values(function(template.radii), core_value)

    @property
    def n_bins(self) -> int:
        return self.values.size

    @property
    def radii(self) -> np.ndarray:
        """Bin centres 1 + (i + 1/2) * delta."""
        return 1.0 + (np.arange(self.n_bins) + 0.5) * self.delta

    @property
    def edges(self) -> np.ndarray:
        """Bin edges 1 + i * delta, the last one clipped to `r_max`."""
        return np.minimum(1.0 + np.arange(self.n_bins + 1) * self.delta, self.r_max)

    def shell_volumes(self) -> np.ndarray:
        """Volume of the shell {edge_i <= |x| < edge_(i+1)} of every bin."""
        edges = self.edges
        return unit_ball_volume(self.dimension) * (edges[1:] ** self.dimension - edges[:-1] ** self.dimension)

    def same_grid(self, other: "RadialFunction") -> bool:
        return (
            self.dimension == other.dimension
            and self.n_bins == other.n_bins
            and math.isclose(self.delta, other.delta)
            and math.isclose(self.r_max, other.r_max)
        )

    def with_values(
        self, values: Optional[np.ndarray] = None, core_value: Optional[float] = None
    ) -> "RadialFunction":
        """Returns a function on the same grid with the given samples and/or core value."""
        return RadialFunction(
            self.dimension,
            self.delta,
            self.r_max,
            self.values if values is None else values,
            self.core_value if core_value is None else core_value,
        )

    def evaluate_radius(self, radius: Union[float, np.ndarray]) -> np.ndarray:
        """Vectorised evaluation at distances from the origin."""
        r = np.asarray(radius, dtype=float)
        out = np.zeros(r.shape)
        core = r < 1.0
        out[core] = self.core_value
        inside = ~core & (r <= self.r_max)
        if self.n_bins and inside.any():
            index = np.floor((r[inside] - 1.0) / self.delta).astype(np.int64)
            np.clip(index, 0, self.n_bins - 1, out=index)
            out[inside] = self.values[index]
        return out

    def __sub__(self, other: "RadialFunction") -> "RadialFunction":
        if not self.same_grid(other):
            raise GridMismatchException(
                f"Cannot subtract functions on grids (d={other.dimension}, delta={other.delta}, "
                f"r_max={other.r_max}) and (d={self.dimension}, delta={self.delta}, r_max={self.r_max})."
            )
        return self.with_values(self.values - other.values, self.core_value - other.core_value)


@dataclass(frozen=True)
class NormBracket:
    """Lower and upper estimates of the packing norm."""

    lower: float
    upper: float

    def __post_init__(self):
        assert 0.0 <= self.lower
        assert self.lower <= self.upper * (1.0 + 1e-12) + config.ABSOLUTE_FLOOR

    def contains(self, value: float, rel_tol: float = 1e-9) -> bool:
        slack = rel_tol * max(abs(value), self.upper, 1e-300)
        return self.lower - slack <= value <= self.upper + slack

    def to_dict(self) -> dict[str, float]:
        return {"lower": self.lower, "upper": self.upper}


@dataclass(frozen=True, eq=False)
class HardCorePotential:
    """A pair potential with unit hard core, represented by its Mayer bond g = exp(-Phi) - 1.

    Fields:
        `g (RadialFunction)`: Core value -1, every outside sample above -1.
    """

    g: RadialFunction

    def __post_init__(self):
        assert self.g.core_value == -1.0
        _check_physical(self.g)

    @classmethod
    def from_phi(cls, phi: RadialFunction) -> "HardCorePotential":
        return cls(phi_to_g(phi))

    @property
    def phi(self) -> RadialFunction:
        return g_to_phi(self.g)

    @property
    def a(self) -> float:
        """Smallest a >= 0 with g >= -a outside the core."""
        if self.g.n_bins == 0:
            return 0.0
        return max(0.0, -float(self.g.values.min()))

    @property
    def norm(self) -> "NormBracket":
        return packing_norm(self.g)


@dataclass(frozen=True, eq=False)
class ClusterTargets:
    """The first two cluster functions the inverse problem has to reproduce.

    Fields:
        `omega1 (float)`: The density, equal to z0.
        `omega2 (RadialFunction)`: Truncated pair correlation, -omega1**2 on the core when admissible.
        `r (float)`: Smallness ratio the tail's packing norm is measured against.
    """

    omega1: float
    omega2: RadialFunction
    r: float = config.SMALLNESS_RATIO

    @property
    def z0(self) -> float:
        return self.omega1


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    reasons: tuple[str, ...]
    bracket: NormBracket
    bound: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "reasons": list(self.reasons),
            "bracket": self.bracket.to_dict(),
            "bound": self.bound,
        }


def hard_core(
    dimension: int = config.DIMENSION,
    delta: float = config.GRID_SPACING,
    r_max: float = config.SUPPORT_RADIUS,
) -> RadialFunction:
    """Mayer bond of the pure hard core: -1 on the unit ball, 0 outside."""
    return RadialFunction.zeros(dimension, delta, r_max, core_value=-1.0)


def evaluate(f: RadialFunction, x: Union[float, np.ndarray]) -> float:
    """Value of `f` at the point `x` of R^d (a scalar is accepted for d = 1)."""
    radius = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
    return float(f.evaluate_radius(radius))


def integral(f: RadialFunction) -> float:
    """Exact integral of `f` over R^d."""
    return f.core_value * unit_ball_volume(f.dimension) + float(np.dot(f.values, f.shell_volumes()))


def l1_mass(f: RadialFunction) -> float:
    """Integral of |f| outside the unit ball, finite for every regular potential."""
    return float(np.dot(np.abs(f.values), f.shell_volumes()))


def _check_physical(g: RadialFunction) -> None:
    bad = np.flatnonzero(g.values <= -1.0)
    if bad.size:
        radius = float(g.radii[bad[0]])
        raise NonPhysicalException(
            f"Mayer bond sample {g.values[bad[0]]} <= -1 at radius {radius}, the potential is undefined there.",
            radius,
        )


def g_to_phi(g: RadialFunction) -> RadialFunction:
    """Phi = -ln(g + 1) outside the core, +inf on the core."""
    if g.core_value != -1.0:
        raise ValueError(f"A hard core Mayer bond has core value -1, got {g.core_value}.")
    _check_physical(g)
    return g.with_values(-np.log1p(g.values), math.inf)


def phi_to_g(phi: RadialFunction) -> RadialFunction:
    """g = exp(-Phi) - 1, with the +inf core mapped to -1."""
    core = -1.0 if math.isinf(phi.core_value) and phi.core_value > 0 else math.expm1(-phi.core_value)
    return phi.with_values(np.expm1(-phi.values), core)


# region PACKING NORM
def _node_weights(f: RadialFunction) -> np.ndarray:
    """|f| at the bin edges, where a point may take either neighbouring bin's value."""
    a = np.abs(f.values)
    if a.size == 0:
        return a
    weights = np.empty(a.size + 1)
    weights[0] = a[0]
    weights[-1] = a[-1]
    weights[1:-1] = np.maximum(a[:-1], a[1:])
    return weights


def packing_dp_1d(f: RadialFunction) -> float:
    """Exact packing norm of a d = 1 function over packings restricted to bin edges.

    The two half lines never interact (points on opposite sides are at least 2 apart),
    so the value is twice the best weighted packing of one half line, found by the
    weighted interval scheduling recursion best[j] = max(best[j-1], w[j] + best[prev(j)]).
    """
    weights = _node_weights(f)
    if weights.size == 0:
        return 0.0
    positions = f.edges
    previous = np.searchsorted(positions, positions - 1.0 + 1e-9, side="right") - 1
    best = np.zeros(weights.size + 1)
    for j in range(weights.size):
        best[j + 1] = max(best[j], weights[j] + best[previous[j] + 1])
    return 2.0 * float(best[-1])


def _candidate_points(f: RadialFunction, spacing: Optional[float]) -> tuple[np.ndarray, np.ndarray]:
    if f.dimension == 1:
        edges = f.edges
        weights = _node_weights(f)
        return np.concatenate([edges, -edges])[:, None], np.concatenate([weights, weights])
    step = spacing or max(f.delta, config.PACKING_CANDIDATE_SPACING[f.dimension])
    axis = np.arange(-f.r_max, f.r_max + step / 2, step)
    grid = np.stack(np.meshgrid(*[axis] * f.dimension, indexing="ij"), axis=-1).reshape(-1, f.dimension)
    radius = np.linalg.norm(grid, axis=1)
    keep = (radius >= 1.0) & (radius <= f.r_max)
    return grid[keep], np.abs(f.evaluate_radius(radius[keep]))


def greedy_lower_bound(f: RadialFunction, spacing: Optional[float] = None) -> float:
    """Sum of |f| over a greedily built unit-separated set of candidate points outside B1.

    Candidates are the bin edges on both half lines for d = 1 and a cubic lattice for d >= 2.
    The heaviest remaining candidate is taken and every candidate closer than 1 is blocked.
    """
    points, weights = _candidate_points(f, spacing)
    if weights.size == 0 or not weights.any():
        return 0.0
    tree = cKDTree(points)
    blocked = np.zeros(weights.size, dtype=bool)
    total = 0.0
    for i in np.argsort(-weights, kind="stable"):
        if weights[i] == 0.0:
            break
        if blocked[i]:
            continue
        total += weights[i]
        blocked[tree.query_ball_point(points[i], 1.0 - 1e-9)] = True
    return total


def integral_lower_bound(f: RadialFunction) -> float:
    """Integral of |f| outside B1 divided by Vol(B1), a lower bound of the packing norm."""
    return l1_mass(f) / unit_ball_volume(f.dimension)


def cell_upper_bound(f: RadialFunction) -> float:
    """Upper bound of the packing norm from radial blocks of whole bins.

    Balls of radius 1/2 around unit-separated points are disjoint, so the closed shell
    a <= |x| <= b holds at most floor(2^d ((b + 1/2)^d - (a - 1/2)^d)) of them. Each block
    contributes that count times the largest |f| it can see (its own bins and the bins
    adjacent to its edges). The smallest total over all block widths is returned.
    """
    a = np.abs(f.values)
    if a.size == 0 or not a.any():
        return 0.0
    edges = f.edges
    d = f.dimension
    best = math.inf
    for width in range(1, a.size + 1):
        total = 0.0
        for start in range(0, a.size, width):
            stop = min(start + width, a.size)
            inner, outer = edges[start], edges[stop]
            count = math.floor(2**d * ((outer + 0.5) ** d - (inner - 0.5) ** d) + 1e-9)
            total += count * a[max(start - 1, 0) : min(stop + 1, a.size)].max()
        best = min(best, total)
    return best


def packing_norm(f: RadialFunction) -> NormBracket:
    """Bracket of sup over unit-separated sets outside B1 of sum |f(x)|.

    For d = 1 the edge-restricted dynamic program is exact up to grid resolution and is
    returned as both bounds. For d >= 2 the lower bound is the better of the greedy packing
    and the integral bound, the upper bound comes from `cell_upper_bound`.
    """
    if f.dimension == 1:
        value = packing_dp_1d(f)
        return NormBracket(value, value)
    lower = max(greedy_lower_bound(f), integral_lower_bound(f))
    upper = max(cell_upper_bound(f), lower)
    return NormBracket(lower, upper)


def stability_bound(g: RadialFunction) -> float:
    """Constant B with U(x_1..x_n) >= -B n for hard-core-respecting configurations."""
    return 0.5 * packing_norm(g).upper


def max_unit_separated_in_ball(dimension: int, attempts: int, rng: np.random.Generator, draws: int = 400) -> int:
    """Largest number of unit-separated points found inside the open unit ball.

    Every attempt fills the ball by random sequential addition of `draws` uniform points.
    """
    best = 0
    for _ in range(attempts):
        directions = rng.normal(size=(draws, dimension))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = rng.uniform(size=(draws, 1)) ** (1.0 / dimension) * (1.0 - 1e-12)
        placed: list[np.ndarray] = []
        for point in directions * radii:
            if all(np.linalg.norm(point - other) >= 1.0 for other in placed):
                placed.append(point)
        best = max(best, len(placed))
    return best


# endregion


def check_admissible(targets: ClusterTargets, r: Optional[float] = None) -> AdmissibilityReport:
    """Checks the targets against the hypotheses of the inverse theorem.

    The core value has to be exactly -omega1**2 and the upper bracket of the tail's
    packing norm at most r * omega1**2. Symmetry holds by construction. Never raises:
    every failing check is listed in the report's `reasons`.
    """
    r = targets.r if r is None else r
    reasons: list[str] = []
    if not 0.0 < r < 1.0:
        reasons.append(f"r = {r} is not in (0, 1).")
    if not targets.omega1 > 0.0:
        reasons.append(f"omega1 = {targets.omega1} is not positive.")

    expected_core = -(targets.omega1**2)
    if not math.isclose(
        targets.omega2.core_value,
        expected_core,
        rel_tol=config.RELATIVE_TOLERANCE,
        abs_tol=config.ABSOLUTE_FLOOR,
    ):
        reasons.append(
            f"Core value {targets.omega2.core_value} of omega2 differs from -omega1**2 = {expected_core}."
        )

    bracket = packing_norm(targets.omega2)
    bound = r * targets.omega1**2
    if bracket.upper > bound * (1.0 + config.RELATIVE_TOLERANCE):
        reasons.append(f"Packing norm of the omega2 tail is at most {bracket.upper}, above r * omega1**2 = {bound}.")

    for reason in reasons:
        logging.info(f"Inadmissible targets: {reason}")
    return AdmissibilityReport(not reasons, tuple(reasons), bracket, bound)


def correlation_to_cluster(rho1: float, rho2: RadialFunction, r: float = config.SMALLNESS_RATIO) -> ClusterTargets:
    """omega1 = rho1, omega2 = rho2 - rho1**2 (core included)."""
    shift = rho1**2
    return ClusterTargets(rho1, rho2.with_values(rho2.values - shift, rho2.core_value - shift), r)


def cluster_to_correlation(targets: ClusterTargets) -> tuple[float, RadialFunction]:
    """rho1 = omega1, rho2 = omega2 + omega1**2 (core included)."""
    shift = targets.omega1**2
    omega2 = targets.omega2
    return targets.omega1, omega2.with_values(omega2.values + shift, omega2.core_value + shift)


# region PERSISTENCE
def _encode(value: float) -> Union[float, str]:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _decode(value: Union[float, str]) -> float:
    return float(value)


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def write_radial_csv(f: RadialFunction, path: Union[str, Path]) -> None:
    """Writes `r,value` rows (one per bin) and the json sidecar {d, delta, r_max, core_value}."""
    path = Path(path)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["r", "value"])
        for radius, value in zip(f.radii, f.values):
            writer.writerow([repr(float(radius)), repr(float(value))])
    sidecar = {"d": f.dimension, "delta": f.delta, "r_max": f.r_max, "core_value": _encode(f.core_value)}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_radial_csv(path: Union[str, Path]) -> RadialFunction:
    """Reads a radial function written by `write_radial_csv`."""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    values = np.array([float(row["value"]) for row in rows])
    return RadialFunction(
        int(meta["d"]), float(meta["delta"]), float(meta["r_max"]), values, _decode(meta["core_value"])
    )


# endregion
