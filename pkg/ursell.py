"""Sequences over finite configurations, Boltzmann factors and the Ursell functions.

Three evaluators of the Ursell function of a configuration live here and are checked
against each other in the tests:
    - `ursell_direct`: sum over connected graphs of products of Mayer bonds.
    - `ursell_recurrence`: the recurrence on phi~_X(Y), memoized on index sets.
    - `ursell_batch`: vectorised inversion of the Boltzmann subset table, used as the
    integrand of the cluster series.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np
from networkx.utils import UnionFind

import config
from enums import SeriesKind
from pairfn import RadialFunction


class OrderTooLargeException(Exception):
    """A configuration is longer than the largest order the connected-graph table is built for."""


@dataclass(frozen=True, eq=False)
class Configuration:
    """An ordered finite sequence of points of R^d, stored as an (m, d) array.

    Points need not be distinct. A flat sequence is read as points of R^1.
    """

    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim <= 1:
            points = points.reshape(-1, 1)
        assert points.ndim == 2
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def subsequence(self, indices: Sequence[int]) -> "Configuration":
        return Configuration(self.points[list(indices)].reshape(-1, self.dimension))

    def prefix(self, m: int) -> "Configuration":
        return Configuration(self.points[:m])

    def shifted(self, offset: Union[float, np.ndarray]) -> "Configuration":
        return Configuration(self.points + np.asarray(offset, dtype=float))

    def permuted(self, order: Sequence[int]) -> "Configuration":
        return self.subsequence(order)

    def concat(self, other: "Configuration") -> "Configuration":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return Configuration(np.vstack([self.points, other.points]))


def _bits(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


def _submasks(mask: int):
    """All submasks of `mask`, from `mask` down to 0."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def bond_matrix(g: RadialFunction, points: np.ndarray) -> np.ndarray:
    """g(x_i - x_j) for every pair of a batch of configurations.

    Args:
        `points (np.ndarray)`: Shape (m, d) or (B, m, d).

    Returns:
        `np.ndarray`: Shape (m, m) or (m, m, B). The diagonal is 0.
    """
    batched = np.asarray(points, dtype=float)
    single = batched.ndim == 2
    if single:
        batched = batched[None]
    distance = np.linalg.norm(batched[:, :, None, :] - batched[:, None, :, :], axis=-1)
    bonds = np.moveaxis(g.evaluate_radius(distance), 0, -1)
    m = batched.shape[1]
    bonds[np.arange(m), np.arange(m)] = 0.0
    return bonds[..., 0] if single else bonds


def boltzmann(g: RadialFunction, x: Configuration) -> float:
    """e^-U(X) as the product over pairs of (1 + g(x_i - x_j)). Zero when a pair overlaps the core."""
    m = len(x)
    if m < 2:
        return 1.0
    bonds = bond_matrix(g, x.points)
    upper = np.triu_indices(m, 1)
    return float(np.prod(1.0 + bonds[upper]))


# region SEQUENCE ALGEBRA
@dataclass(frozen=True)
class TruncatedSequence:
    """A sequence (psi_m) for m <= `order`, evaluated lazily on configurations.

    Fields:
        `order (int)`: Largest m the sequence is defined for.
        `scalar (float)`: Component 0.
        `components (tuple)`: For m = 1..order, a function of a configuration of length m.
    """

    order: int
    scalar: float
    components: tuple[Callable[[Configuration], float], ...]

    def __post_init__(self):
        assert self.order >= 1
        assert len(self.components) == self.order

    def __call__(self, x: Configuration) -> float:
        m = len(x)
        if m == 0:
            return self.scalar
        if m > self.order:
            raise ValueError(f"Sequence of order {self.order} evaluated on {m} points.")
        return self.components[m - 1](x)


def _subset_table(sequence: TruncatedSequence, x: Configuration) -> np.ndarray:
    """Values of `sequence` on every subsequence of `x`, indexed by bitmask."""
    m = len(x)
    table = np.empty(1 << m)
    table[0] = sequence.scalar
    for mask in range(1, 1 << m):
        table[mask] = sequence(x.subsequence(_bits(mask)))
    return table


def partition_sum(weights: np.ndarray) -> np.ndarray:
    """P(S) = sum over T containing min(S), T a subset of S, of w(T) P(S - T), with P(0) = 1.

    P(S) is the sum over set partitions of S of the products of `weights` over the blocks.

    Args:
        `weights (np.ndarray)`: Shape (2^m, ...) indexed by bitmask. `weights[0]` is ignored.
    """
    full = weights.shape[0]
    result = np.zeros_like(weights, dtype=float)
    result[0] = 1.0
    for s in range(1, full):
        low = s & -s
        rest = s ^ low
        total = np.zeros(weights.shape[1:])
        for t in _submasks(rest):
            total = total + weights[t | low] * result[rest ^ t]
        result[s] = total
    return result


def partition_inverse(values: np.ndarray) -> np.ndarray:
    """Inverse of `partition_sum`: phi(S) = psi(S) - sum over T containing min(S),
    T a proper subset of S, of phi(T) psi(S - T). Requires psi(0) = 1.
    """
    full = values.shape[0]
    result = np.zeros_like(values, dtype=float)
    for s in range(1, full):
        low = s & -s
        rest = s ^ low
        total = np.array(values[s], dtype=float)
        for t in _submasks(rest):
            if t != rest:
                total = total - result[t | low] * values[rest ^ t]
        result[s] = total
    return result


def star(first: TruncatedSequence, second: TruncatedSequence) -> TruncatedSequence:
    """(first * second)(X) = sum over subsequences Y of X of first(Y) second(X - Y)."""
    assert first.order == second.order

    def component(x: Configuration) -> float:
        m = len(x)
        full = (1 << m) - 1
        total = 0.0
        for mask in range(1 << m):
            total += first(x.subsequence(_bits(mask))) * second(x.subsequence(_bits(full ^ mask)))
        return total

    return TruncatedSequence(
        first.order, first.scalar * second.scalar, tuple(component for _ in range(first.order))
    )


def gamma(phi: TruncatedSequence) -> TruncatedSequence:
    """Gamma phi = 1 + phi + phi*phi/2! + ..., the sum over set partitions of products of phi."""
    assert phi.scalar == 0.0

    def component(x: Configuration) -> float:
        return float(partition_sum(_subset_table(phi, x))[-1])

    return TruncatedSequence(phi.order, 1.0, tuple(component for _ in range(phi.order)))


def gamma_inverse(psi: TruncatedSequence) -> TruncatedSequence:
    """The sequence phi with phi_0 = 0 and Gamma phi = psi."""
    assert psi.scalar == 1.0

    def component(x: Configuration) -> float:
        return float(partition_inverse(_subset_table(psi, x))[-1])

    return TruncatedSequence(psi.order, 0.0, tuple(component for _ in range(psi.order)))


def boltzmann_sequence(g: RadialFunction, order: int = config.M_MAX) -> TruncatedSequence:
    return TruncatedSequence(order, 1.0, tuple(lambda x: boltzmann(g, x) for _ in range(order)))


def ursell_sequence(g: RadialFunction, order: int = config.M_MAX) -> TruncatedSequence:
    """The Ursell functions as Gamma^-1 of the Boltzmann factors."""
    return gamma_inverse(boltzmann_sequence(g, order))


# endregion


# region CONNECTED GRAPHS
def _edges(m: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(m), 2))


@lru_cache(maxsize=None)
def connected_graphs(m: int) -> np.ndarray:
    """Edge sets of all connected graphs on m labelled vertices.

    Returns:
        `np.ndarray`: Boolean array of shape (count, m(m-1)/2), columns in `itertools.combinations` order.
    """
    if m > config.M_MAX:
        raise OrderTooLargeException(f"Connected-graph table requested for m = {m} > {config.M_MAX}.")
    edges = _edges(m)
    masks = []
    for mask in range(1 << len(edges)):
        components = UnionFind(range(m))
        for bit, (i, j) in enumerate(edges):
            if mask >> bit & 1:
                components.union(i, j)
        if len({components[i] for i in range(m)}) <= 1:
            masks.append(mask)
    table = np.zeros((len(masks), len(edges)), dtype=bool)
    for row, mask in enumerate(masks):
        table[row] = [bool(mask >> bit & 1) for bit in range(len(edges))]
    table.setflags(write=False)
    logging.debug(f"Built table of {table.shape[0]} connected graphs on {m} vertices.")
    return table


def ursell_direct(g: RadialFunction, x: Configuration) -> float:
    """Sum over connected graphs G on the points of X of the product of g over the edges of G."""
    m = len(x)
    if m > config.M_MAX:
        raise OrderTooLargeException(f"Configuration of {m} points exceeds the largest order {config.M_MAX}.")
    if m == 0:
        return 0.0
    if m == 1:
        return 1.0
    bonds = bond_matrix(g, x.points)
    edge_bonds = np.array([bonds[i, j] for i, j in _edges(m)])
    graphs = connected_graphs(m)
    return float(np.where(graphs, edge_bonds, 1.0).prod(axis=1).sum())


# endregion


# region RECURRENCE
class RecurrenceContext:
    """Memo of phi~_X(Y) for subsets of one fixed ambient configuration.

    X is a tuple of point indices (its order matters through its first element), Y a bitmask.
    Base case: phi~ of an empty X is 1 on an empty Y and 0 otherwise. Otherwise
        phi~_X(Y) = prod_(i>=2) (1 + g(x_i - x_1)) * sum over Z subset of Y of
                    prod_(z in Z) g(z - x_1) * phi~_(x_2..x_m, Z)(Y - Z).
    """

    def __init__(self, g: RadialFunction, points: Configuration):
        self.bonds = bond_matrix(g, points.points)
        self.factors = 1.0 + self.bonds
        self._memo: dict[tuple[tuple[int, ...], int], float] = {}

    def value(self, x: tuple[int, ...], y: int) -> float:
        key = (x, y)
        if key in self._memo:
            return self._memo[key]
        if not x:
            result = 1.0 if y == 0 else 0.0
        else:
            first, rest = x[0], x[1:]
            prefactor = math.prod(self.factors[first, i] for i in rest)
            result = 0.0
            if prefactor != 0.0:
                for z in _submasks(y):
                    chosen = _bits(z)
                    weight = math.prod(self.bonds[first, j] for j in chosen)
                    if weight != 0.0:
                        result += weight * self.value(rest + tuple(chosen), y ^ z)
                result *= prefactor
        self._memo[key] = result
        return result


def ursell_recurrence(g: RadialFunction, x: Configuration, y: Configuration) -> float:
    """phi~_X(Y). With X = (x_1) this is the Ursell function of (x_1, y_1, .., y_n)."""
    points = x.concat(y)
    context = RecurrenceContext(g, points)
    y_mask = sum(1 << (len(x) + j) for j in range(len(y)))
    return context.value(tuple(range(len(x))), y_mask)


# endregion


# region BATCHED EVALUATION
def boltzmann_subsets(factors: np.ndarray) -> np.ndarray:
    """Boltzmann factor of every subsequence of a batch of configurations.

    Args:
        `factors (np.ndarray)`: Pair factors 1 + g(x_i - x_j) of shape (m, m, B).

    Returns:
        `np.ndarray`: Shape (2^m, B), indexed by bitmask.
    """
    m = factors.shape[0]
    psi = np.ones((1 << m,) + factors.shape[2:])
    for s in range(1, 1 << m):
        low = (s & -s).bit_length() - 1
        rest = s & (s - 1)
        value = psi[rest]
        for j in _bits(rest):
            value = value * factors[low, j]
        psi[s] = value
    return psi


def ursell_from_factors(factors: np.ndarray) -> np.ndarray:
    """Ursell function of the full configuration for a batch given by its pair factors."""
    m = factors.shape[0]
    if m > config.M_MAX:
        raise OrderTooLargeException(f"Batch of {m}-point configurations exceeds the largest order {config.M_MAX}.")
    if m == 0:
        return np.zeros(factors.shape[2:])
    return partition_inverse(boltzmann_subsets(factors))[-1]


def ursell_batch(g: RadialFunction, points: np.ndarray) -> np.ndarray:
    """Ursell functions of a batch of configurations of shape (B, m, d)."""
    points = np.asarray(points, dtype=float)
    return ursell_from_factors(1.0 + bond_matrix(g, points))


# endregion


@dataclass(frozen=True, eq=False)
class IntegralEstimate:
    """A quadrature estimate with its nonnegative error estimate (scalar or one per radius)."""

    value: Union[float, np.ndarray]
    error: Union[float, np.ndarray]

    def __post_init__(self):
        assert np.all(np.asarray(self.error) >= 0)


@dataclass(frozen=True, eq=False)
class UrsellTable:
    """Integrals of the Ursell functions needed by one cluster series.

    For `SeriesKind.A` the entry n is the integral of phi_(1+n)(0, y_1, .., y_n), n >= 1.
    For `SeriesKind.B` the entry n is, for every radius in `radii`, the integral of
    phi_(2+n)(0, x, y_1, .., y_n) with |x| the radius, and entry 0 is g at the radii.
    """

    kind: SeriesKind
    entries: dict[int, IntegralEstimate] = field(default_factory=dict)
    radii: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind is SeriesKind.A:
            assert self.radii is None
            assert all(n >= 1 for n in self.entries)
        else:
            assert self.radii is not None
            assert all(n >= 0 for n in self.entries)

    @property
    def orders(self) -> list[int]:
        return sorted(self.entries)


@dataclass(frozen=True)
class BoundDiagnostic:
    """|I_n| / n! per order and the ratios of successive magnitudes."""

    magnitudes: dict[int, float]
    ratios: dict[int, float]
    finite: bool


def bound_diagnostic(table: UrsellTable) -> BoundDiagnostic:
    """Magnitudes |I_n| / n! (largest over radii for B) and their successive ratios."""
    magnitudes = {
        n: float(np.max(np.abs(table.entries[n].value))) / math.factorial(n) for n in table.orders if n >= 1
    }
    orders = sorted(magnitudes)
    ratios = {
        n: magnitudes[n] / magnitudes[prev] if magnitudes[prev] > 0 else math.inf
        for prev, n in zip(orders, orders[1:])
    }
    finite = all(math.isfinite(v) for v in magnitudes.values())
    return BoundDiagnostic(magnitudes, ratios, finite)


def debug_table(g: RadialFunction, x: Configuration) -> list[dict[str, Optional[float]]]:
    """Per prefix of X: Boltzmann factor and the Ursell function from every evaluator."""
    rows = []
    for m in range(1, len(x) + 1):
        prefix = x.prefix(m)
        rows.append(
            {
                "m": m,
                "boltzmann": boltzmann(g, prefix),
                "connected_graphs": ursell_direct(g, prefix) if m <= config.M_MAX else None,
                "recurrence": float(ursell_recurrence(g, prefix.prefix(1), Configuration(prefix.points[1:]))),
                "gamma_inverse": float(ursell_batch(g, prefix.points[None])[0]) if m <= config.M_MAX else None,
            }
        )
    return rows
