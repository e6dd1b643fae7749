"""Truncated cluster series A(z, g), B(z, g)(x) and the forward map (z, g) -> (omega1, omega2).

    A(z, g)    = sum_(n=1..N) z^(n-1) / n! * I_n,     I_n    = integral of phi_(1+n)(0, y_1, .., y_n)
    B(z, g)(x) = sum_(n=1..N) z^(n-1) / n! * J_n(x),  J_n(x) = integral of phi_(2+n)(0, x, y_1, .., y_n)
    omega1 = z + z^2 A,   omega2(x) = z^2 g(x) + z^3 B(x)

The order n integrand vanishes once any y_j is more than n bond lengths from the origin
(n + 1 for B, counting the bond to x), so the integrals over those boxes are exact.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Optional, Union

import numpy as np

import config
from enums import QuadratureScheme, SeriesKind, Stream
from pairfn import RadialFunction, integral, packing_norm
from ursell import IntegralEstimate, UrsellTable, bond_matrix, bound_diagnostic, ursell_batch, ursell_from_factors
from utils import make_rng

GRID_OFFSET: float = 0.2371
"""Offset of the first tensor axis, in units of the step."""

GRID_OFFSET_STEP: float = 0.1173
"""Increment of the offset per tensor axis, keeping grid points off every bin edge."""


class QuadratureUnderResolvedException(Exception):
    """The Monte Carlo error of a series exceeds the configured fraction of its value.

    Fields:
        `kind (SeriesKind)`: The series.
        `error (float)`: Monte Carlo error contribution to the series.
        `scale (float)`: Magnitude of the series value.
    """

    def __init__(self, message: str, kind: SeriesKind, error: float, scale: float):
        super().__init__(message)
        self.kind = kind
        self.error = error
        self.scale = scale


class ActivityGuardException(Exception):
    """An activity is above the guard that stands in for the convergence radius of the series.

    Fields:
        `guard (float)`: The guarded quantity.
        `limit (float)`: Its configured ceiling.
    """

    def __init__(self, message: str, guard: float, limit: float):
        super().__init__(message)
        self.guard = guard
        self.limit = limit


@dataclass(frozen=True)
class QuadratureSpec:
    """How the Ursell integrals are evaluated.

    Fields:
        `scheme (QuadratureScheme)`: Tensor midpoint grids are used for d = 1 and n <= 3, Monte Carlo
        otherwise. `MONTE_CARLO` forces Monte Carlo for every order.
        `box_radius (Optional[float])`: Half width of the integration box. Defaults to the support
        radius of each order, an override may not be smaller.
        `spacing (float)`: Finest tensor grid step.
        `max_points (int)`: Tensor points per order above which the step is coarsened.
        `samples (int)`: Monte Carlo points per replicate (rounded down to a full stratification).
        `replicates (int)`: Independent Monte Carlo replicates, their spread is the error estimate.
        `seed (int)`: Seed of the Monte Carlo streams.
        `workers (int)`: Orders integrated concurrently.
        `under_resolved_fraction (float)`: Largest accepted Monte Carlo error relative to the value.
    """

    scheme: QuadratureScheme = QuadratureScheme.TENSOR_MIDPOINT
    box_radius: Optional[float] = None
    spacing: float = config.TENSOR_SPACING
    max_points: int = config.MAX_TENSOR_POINTS
    samples: int = config.MC_SAMPLES
    replicates: int = config.MC_REPLICATES
    seed: int = config.SEED
    workers: int = config.THREADS
    under_resolved_fraction: float = config.UNDER_RESOLVED_FRACTION

    def __post_init__(self):
        assert self.box_radius is None or self.box_radius > 0
        assert self.spacing > 0
        assert self.max_points >= 1
        assert self.samples >= 1
        assert self.replicates >= 2
        assert self.workers >= 1
        assert self.under_resolved_fraction > 0

    @classmethod
    def from_dict(cls, values: dict[str, Any], **overrides: Any) -> "QuadratureSpec":
        """Builds the settings from a json object, `overrides` win over `values`."""
        merged = {**values, **{key: value for key, value in overrides.items() if value is not None}}
        if "scheme" in merged and isinstance(merged["scheme"], str):
            merged["scheme"] = QuadratureScheme.parse(merged["scheme"])
        return cls(**merged)

    def to_dict(self) -> dict[str, Any]:
        values = asdict(self)
        values["scheme"] = str(self.scheme)
        return values

    def scheme_for(self, n: int, dimension: int) -> QuadratureScheme:
        if self.scheme is QuadratureScheme.TENSOR_MIDPOINT and dimension == 1 and n <= 3:
            return QuadratureScheme.TENSOR_MIDPOINT
        return QuadratureScheme.MONTE_CARLO

    def radius_for(self, n: int, kind: SeriesKind, g: RadialFunction) -> float:
        support = (n if kind is SeriesKind.A else n + 1) * g.r_max
        if self.box_radius is None:
            return support
        if self.box_radius < support:
            raise ValueError(f"Box radius {self.box_radius} is below the support radius {support} of order {n}.")
        return self.box_radius

    def tensor_step(self, dims: int, radius: float) -> float:
        """Grid step for `dims` axes: a unit fraction, so the core boundary never meets a grid point."""
        per_axis = max(int(self.max_points ** (1.0 / dims) + 1e-9), 1)
        step = max(self.spacing, 2.0 * radius / per_axis)
        if step < 1.0:
            return 1.0 / math.ceil(1.0 / step - 1e-9)
        return float(math.ceil(step - 1e-9))


# region QUADRATURE
Integrand = Callable[[np.ndarray], np.ndarray]


def _index_points(begin: int, stop: int, per_axis: int, dims: int) -> np.ndarray:
    return np.stack(np.unravel_index(np.arange(begin, stop), (per_axis,) * dims), axis=-1)


def grid_sum(integrand: Integrand, dims: int, radius: float, step: float) -> Union[float, np.ndarray]:
    """Midpoint sum over the grid (k + s_j) * step, anchored at the origin, covering [-radius, radius]^dims.

    Scalar integrands are summed with `math.fsum` over their nonzero values, so points added by
    a larger box where the integrand vanishes leave the result bit for bit unchanged.
    """
    half = math.ceil(radius / step - 1e-9) + 1
    per_axis = 2 * half
    offsets = (GRID_OFFSET + GRID_OFFSET_STEP * np.arange(dims)) % 1.0
    total_points = per_axis**dims
    scalar_parts: list[np.ndarray] = []
    vector_total: Optional[np.ndarray] = None
    for begin in range(0, total_points, config.CHUNK_SIZE):
        index = _index_points(begin, min(begin + config.CHUNK_SIZE, total_points), per_axis, dims)
        values = integrand((index - half + offsets) * step)
        if values.ndim == 1:
            scalar_parts.append(values[values != 0.0])
        else:
            chunk_total = values.sum(axis=-1)
            vector_total = chunk_total if vector_total is None else vector_total + chunk_total
    weight = step**dims
    if vector_total is None:
        return math.fsum(np.concatenate(scalar_parts)) * weight if scalar_parts else 0.0
    return vector_total * weight


def tensor_estimate(integrand: Integrand, dims: int, radius: float, q: QuadratureSpec) -> IntegralEstimate:
    """Midpoint value at the chosen step, with the change against twice the step as its error."""
    step = q.tensor_step(dims, radius)
    fine = grid_sum(integrand, dims, radius, step)
    coarse = grid_sum(integrand, dims, radius, 2.0 * step)
    logging.debug(f"Tensor grid on {dims} axes, box {radius}, step {step}.")
    return IntegralEstimate(fine, np.abs(np.asarray(fine) - np.asarray(coarse)) if np.ndim(fine) else abs(fine - coarse))


def strata_per_axis(samples: int, dims: int) -> int:
    k = max(int(round(samples ** (1.0 / dims))), 1)
    while k > 1 and k**dims > samples:
        k -= 1
    return k


def monte_carlo_estimate(
    integrand: Integrand, dims: int, radius: float, q: QuadratureSpec, key: tuple[int, ...]
) -> IntegralEstimate:
    """Mean of stratified replicates (one uniform point per cell of a k^dims partition of the box).

    Replicate `rep` draws from the stream (seed, *key, rep).
    """
    k = strata_per_axis(q.samples, dims)
    count = k**dims
    volume = (2.0 * radius) ** dims
    estimates = []
    for rep in range(q.replicates):
        rng = make_rng(q.seed, *key, rep)
        total: Union[float, np.ndarray] = 0.0
        for begin in range(0, count, config.CHUNK_SIZE):
            index = _index_points(begin, min(begin + config.CHUNK_SIZE, count), k, dims)
            points = -radius + (index + rng.uniform(size=index.shape)) * (2.0 * radius / k)
            total = total + integrand(points).sum(axis=-1)
        estimates.append(np.asarray(total) * volume / count)
    stacked = np.stack(estimates)
    value = stacked.mean(axis=0)
    error = stacked.std(axis=0, ddof=1) / math.sqrt(q.replicates)
    logging.debug(f"Monte Carlo on {dims} axes with {k}^{dims} strata x {q.replicates} replicates.")
    if value.ndim == 0:
        return IntegralEstimate(float(value), float(error))
    return IntegralEstimate(value, error)


def _integrate(integrand: Integrand, n: int, kind: SeriesKind, g: RadialFunction, q: QuadratureSpec) -> IntegralEstimate:
    dims = n * g.dimension
    radius = q.radius_for(n, kind, g)
    if q.scheme_for(n, g.dimension) is QuadratureScheme.TENSOR_MIDPOINT:
        return tensor_estimate(integrand, dims, radius, q)
    return monte_carlo_estimate(integrand, dims, radius, q, (Stream.QUADRATURE, list(SeriesKind).index(kind) + 1, n))


def a_integrand(g: RadialFunction, n: int) -> Integrand:
    """phi_(1+n)(0, y_1, .., y_n) for a batch of flattened (y_1, .., y_n)."""
    d = g.dimension

    def integrand(flat: np.ndarray) -> np.ndarray:
        points = np.zeros((flat.shape[0], n + 1, d))
        points[:, 1:, :] = flat.reshape(-1, n, d)
        return ursell_batch(g, points)

    return integrand


def b_integrand(g: RadialFunction, n: int, radii: np.ndarray) -> Integrand:
    """phi_(2+n)(0, x, y_1, .., y_n) for every x = (radius, 0, ..) and a batch of flattened y.

    The bonds not involving x are evaluated once per batch and shared by all radii.
    """
    d = g.dimension
    origin_bonds = 1.0 + g.evaluate_radius(radii)

    def integrand(flat: np.ndarray) -> np.ndarray:
        y = flat.reshape(-1, n, d)
        points = np.zeros((y.shape[0], n + 2, d))
        points[:, 2:, :] = y
        factors = 1.0 + bond_matrix(g, points)
        out = np.empty((radii.size, y.shape[0]))
        for i, radius in enumerate(radii):
            x = np.zeros(d)
            x[0] = radius
            to_x = (1.0 + g.evaluate_radius(np.linalg.norm(y - x, axis=-1))).T
            factors[1, 2:, :] = to_x
            factors[2:, 1, :] = to_x
            factors[0, 1, :] = origin_bonds[i]
            factors[1, 0, :] = origin_bonds[i]
            out[i] = ursell_from_factors(factors)
        return out

    return integrand


def integrate_a(g: RadialFunction, n: int, q: QuadratureSpec) -> IntegralEstimate:
    """I_n. The first order is the exact integral of g."""
    if n == 1:
        return IntegralEstimate(integral(g), 0.0)
    return _integrate(a_integrand(g, n), n, SeriesKind.A, g, q)


def series_radii(g: RadialFunction) -> np.ndarray:
    """Radii B is evaluated at: the core probe radius, then every bin centre of g."""
    return np.concatenate([[config.CORE_PROBE_RADIUS], g.radii])


def integrate_b(g: RadialFunction, n: int, q: QuadratureSpec) -> IntegralEstimate:
    """J_n at `series_radii(g)`."""
    return _integrate(b_integrand(g, n, series_radii(g)), n, SeriesKind.B, g, q)


# endregion


@dataclass(frozen=True, eq=False)
class SeriesResult:
    """A truncated series with its per-order terms and error estimates.

    For `SeriesKind.B` the value is a radial function on the grid of g, the terms are arrays over
    `series_radii(g)` and the estimates are suprema over those radii.
    """

    kind: SeriesKind
    z: float
    order: int
    value: Union[float, RadialFunction]
    terms: tuple[Union[float, np.ndarray], ...]
    truncation_error_estimate: float
    quadrature_error_estimate: float
    table: UrsellTable

    def __post_init__(self):
        assert self.truncation_error_estimate >= 0
        assert self.quadrature_error_estimate >= 0

    @property
    def magnitudes(self) -> tuple[float, ...]:
        return tuple(float(np.max(np.abs(term))) if np.size(term) else 0.0 for term in self.terms)


@dataclass(frozen=True)
class TruncationReport:
    magnitudes: tuple[float, ...]
    ratio: Optional[float]
    estimate: float
    reliable: bool
    note: str
    quadrature: float

    @property
    def combined(self) -> float:
        return self.estimate + self.quadrature

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "magnitudes": list(self.magnitudes), "combined": self.combined}


def geometric_tail(magnitudes: tuple[float, ...]) -> tuple[Optional[float], float, str]:
    """Ratio of the last two magnitudes and the geometric tail last * ratio / (1 - ratio).

    With three or more magnitudes a ratio that still grows is extrapolated one order further,
    ratio * ratio / previous ratio, before the tail is summed. The returned ratio is the last one.
    """
    if not magnitudes or magnitudes[-1] == 0.0:
        return (0.0 if magnitudes else None), 0.0, "all remaining terms vanish"
    if len(magnitudes) == 1:
        return None, math.inf, "unbounded, N too small"
    previous, last = magnitudes[-2], magnitudes[-1]
    ratio = last / previous if previous > 0 else math.inf
    if ratio >= 1.0:
        return ratio, math.inf, "terms do not decrease"
    tail_ratio = ratio
    if len(magnitudes) >= 3 and magnitudes[-3] > 0 and previous / magnitudes[-3] < ratio:
        tail_ratio = ratio * ratio / (previous / magnitudes[-3])
    if tail_ratio >= 1.0:
        return ratio, math.inf, "ratio grows past 1"
    return ratio, last * tail_ratio / (1.0 - tail_ratio), "geometric extrapolation"


def truncation_report(result: SeriesResult) -> TruncationReport:
    """Per-order magnitudes, the last ratio and the combined truncation and quadrature estimate."""
    ratio, estimate, note = geometric_tail(result.magnitudes)
    reliable = ratio is not None and ratio <= config.UNRELIABLE_RATIO and math.isfinite(estimate)
    if ratio is not None and ratio > config.UNRELIABLE_RATIO:
        note = f"{note}, unreliable: ratio {ratio:.3g} above {config.UNRELIABLE_RATIO}"
    return TruncationReport(result.magnitudes, ratio, estimate, reliable, note, result.quadrature_error_estimate)


def _estimates(
    integrate: Callable[[RadialFunction, int, QuadratureSpec], IntegralEstimate],
    g: RadialFunction,
    order: int,
    q: QuadratureSpec,
) -> list[IntegralEstimate]:
    with ThreadPoolExecutor(max_workers=q.workers) as pool:
        return list(pool.map(lambda n: integrate(g, n, q), range(1, order + 1)))


def _check_resolution(kind: SeriesKind, coefficients, estimates, g: RadialFunction, q: QuadratureSpec, value) -> None:
    monte_carlo = [
        c * np.asarray(e.error)
        for n, (c, e) in enumerate(zip(coefficients, estimates), start=1)
        if q.scheme_for(n, g.dimension) is QuadratureScheme.MONTE_CARLO and (kind is SeriesKind.B or n > 1)
    ]
    if not monte_carlo:
        return
    error = float(np.max(sum(monte_carlo)))
    scale = float(np.max(np.abs(value)))
    logging.debug(f"Monte Carlo error of series {kind}: {error:.3e} against scale {scale:.3e}.")
    if error > q.under_resolved_fraction * scale:
        raise QuadratureUnderResolvedException(
            f"Monte Carlo error {error:.3e} of series {kind} exceeds {q.under_resolved_fraction} of its size {scale:.3e}.",
            kind,
            error,
            scale,
        )


def _coefficients(z: float, order: int) -> list[float]:
    return [z ** (n - 1) / math.factorial(n) for n in range(1, order + 1)]


def series_a(z: float, g: RadialFunction, order: int = config.TRUNCATION_ORDER, q: Optional[QuadratureSpec] = None) -> SeriesResult:
    """A(z, g) truncated after `order` terms."""
    if not z > 0:
        raise ValueError(f"Activity must be positive, got {z}.")
    assert order >= 1
    q = q or QuadratureSpec()
    estimates = _estimates(integrate_a, g, order, q)
    coefficients = _coefficients(z, order)
    terms = tuple(c * float(e.value) for c, e in zip(coefficients, estimates))
    value = math.fsum(terms)
    _check_resolution(SeriesKind.A, coefficients, estimates, g, q, value)
    quadrature = math.fsum(c * float(e.error) for c, e in zip(coefficients, estimates))
    _, truncation, _ = geometric_tail(tuple(abs(t) for t in terms))
    table = UrsellTable(SeriesKind.A, {n: e for n, e in enumerate(estimates, start=1)})
    return SeriesResult(SeriesKind.A, z, order, value, terms, truncation, quadrature, table)


def series_b(z: float, g: RadialFunction, order: int = config.TRUNCATION_ORDER, q: Optional[QuadratureSpec] = None) -> SeriesResult:
    """B(z, g) truncated after `order` terms, at the core probe radius and every bin centre of g."""
    if not z > 0:
        raise ValueError(f"Activity must be positive, got {z}.")
    assert order >= 1
    q = q or QuadratureSpec()
    radii = series_radii(g)
    estimates = _estimates(integrate_b, g, order, q)
    coefficients = _coefficients(z, order)
    terms = tuple(c * np.asarray(e.value) for c, e in zip(coefficients, estimates))
    total = np.zeros(radii.size)
    for term in terms:
        total = total + term
    _check_resolution(SeriesKind.B, coefficients, estimates, g, q, total)
    quadrature_by_radius = np.zeros(radii.size)
    for c, e in zip(coefficients, estimates):
        quadrature_by_radius = quadrature_by_radius + c * np.asarray(e.error)
    magnitudes = tuple(float(np.max(np.abs(term))) for term in terms)
    _, truncation, _ = geometric_tail(magnitudes)
    entries = {0: IntegralEstimate(g.evaluate_radius(radii), np.zeros(radii.size))}
    entries.update({n: e for n, e in enumerate(estimates, start=1)})
    table = UrsellTable(SeriesKind.B, entries, radii)
    value = g.with_values(total[1:], float(total[0]))
    return SeriesResult(SeriesKind.B, z, order, value, terms, truncation, float(quadrature_by_radius.max()), table)


def activity_guard(z: float, g: RadialFunction) -> float:
    """z (c0 + ||g||) with c0 the largest unit-separated count in the open unit ball."""
    return z * (config.BALL_PACKING_COUNTS[g.dimension] + packing_norm(g).upper)


@dataclass(frozen=True, eq=False)
class ForwardResult:
    """Cluster functions produced by (z, g), with the series behind them."""

    z: float
    order: int
    omega1: float
    omega2: RadialFunction
    a: SeriesResult
    b: SeriesResult
    guard: float

    @property
    def omega1_error(self) -> float:
        return self.z**2 * (self.a.truncation_error_estimate + self.a.quadrature_error_estimate)

    @property
    def omega2_error(self) -> float:
        return self.z**3 * (self.b.truncation_error_estimate + self.b.quadrature_error_estimate)

    def to_dict(self) -> dict[str, Any]:
        return {
            "z": self.z,
            "order": self.order,
            "omega1": self.omega1,
            "rho1": self.omega1,
            "omega1_error": self.omega1_error,
            "omega2_error": self.omega2_error,
            "guard": self.guard,
            "series_a": truncation_report(self.a).to_dict(),
            "series_b": truncation_report(self.b).to_dict(),
            "ursell_bounds": {"a": asdict(bound_diagnostic(self.a.table)), "b": asdict(bound_diagnostic(self.b.table))},
        }


def forward_cluster(
    z: float,
    g: RadialFunction,
    order: int = config.TRUNCATION_ORDER,
    q: Optional[QuadratureSpec] = None,
    force: bool = False,
) -> ForwardResult:
    """omega1 = z + z^2 A(z, g) and omega2 = z^2 g + z^3 B(z, g), core included.

    Raises:
        `ActivityGuardException`: If z (c0 + ||g||) exceeds `config.SERIES_GUARD` and `force` is off.
    """
    guard = activity_guard(z, g)
    logging.info(f"Series guard z (c0 + ||g||) = {guard:.6g} (limit {config.SERIES_GUARD}).")
    if guard > config.SERIES_GUARD:
        if not force:
            raise ActivityGuardException(
                f"Activity {z} gives series guard {guard:.6g} above {config.SERIES_GUARD}.", guard, config.SERIES_GUARD
            )
        logging.warning(f"Series guard {guard:.6g} exceeded, continuing because of --force.")
    a = series_a(z, g, order, q)
    b = series_b(z, g, order, q)
    omega1 = z + z**2 * a.value
    omega2 = g.with_values(
        z**2 * g.values + z**3 * b.value.values,
        z**2 * g.core_value + z**3 * b.value.core_value,
    )
    return ForwardResult(z, order, omega1, omega2, a, b, guard)
