import numpy as np
import pytest

import config
from enums import SeriesKind
from pairfn import RadialFunction, hard_core
from ursell import (
    Configuration,
    IntegralEstimate,
    OrderTooLargeException,
    TruncatedSequence,
    UrsellTable,
    bond_matrix,
    boltzmann,
    boltzmann_sequence,
    bound_diagnostic,
    connected_graphs,
    debug_table,
    gamma,
    gamma_inverse,
    partition_inverse,
    partition_sum,
    star,
    ursell_batch,
    ursell_direct,
    ursell_recurrence,
    ursell_sequence,
)
from utils import random_bin_values, random_separated_points

TIGHT = dict(rel=config.RELATIVE_TOLERANCE, abs=1e-12)


def random_bond(rng, dimension: int = 1, amplitude: float = 0.5) -> RadialFunction:
    return RadialFunction(dimension, 0.1, 2.0, random_bin_values(rng, 10, amplitude), -1.0)


def all_evaluators(g: RadialFunction, x: Configuration) -> tuple[float, float, float]:
    direct = ursell_direct(g, x)
    recurrence = ursell_recurrence(g, x.prefix(1), Configuration(x.points[1:]))
    batch = float(ursell_batch(g, x.points[None])[0])
    return direct, recurrence, batch


def separated_line(rng, count: int) -> Configuration:
    """`count` points of the line, pairwise at least 1 apart, in random order."""
    gaps = 1.0 + rng.uniform(0.0, 1.2, size=count - 1)
    positions = np.concatenate([[0.0], np.cumsum(gaps)]) + rng.uniform(-1.0, 1.0)
    return Configuration(rng.permutation(positions))


def subsequence(x: Configuration, mask: int) -> Configuration:
    return x.subsequence([j for j in range(len(x)) if mask >> j & 1])


def relative_boltzmann(g: RadialFunction, x: Configuration, y: Configuration) -> float:
    """(psi^-1 * D_X psi)(Y) from Boltzmann factors alone, psi^-1 being the inverse of psi under star."""
    n = len(y)
    full = (1 << n) - 1
    inverse = [1.0]
    for w in range(1, full + 1):
        inverse.append(-sum(inverse[v] * boltzmann(g, subsequence(y, w ^ v)) for v in range(w) if v & ~w == 0))
    return sum(inverse[w] * boltzmann(g, x.concat(subsequence(y, full ^ w))) for w in range(full + 1))


def random_sequence(rng, order: int, scalar: float = 0.0) -> TruncatedSequence:
    """A sequence whose m-th component is a * cos(b * sum of coordinates) + c."""
    coefficients = rng.uniform(-1.0, 1.0, size=(order, 3))
    components = tuple(
        lambda x, a=a, b=b, c=c: float(a * np.cos(b * x.points.sum()) + c) for a, b, c in coefficients
    )
    return TruncatedSequence(order, scalar, components)


def test_configuration_reads_flat_input_as_line():
    x = Configuration([0.0, 1.5, 3.0])
    assert len(x) == 3
    assert x.dimension == 1
    assert x.points.shape == (3, 1)
    assert len(x.concat(Configuration(np.empty((0, 1))))) == 3


def test_bond_matrix_shapes():
    g = hard_core(1, 0.1, 2.0)
    single = bond_matrix(g, np.array([[0.0], [0.5], [3.0]]))
    assert single.shape == (3, 3)
    np.testing.assert_array_equal(np.diag(single), 0.0)
    assert single[0, 1] == -1.0
    assert single[0, 2] == 0.0
    batch = bond_matrix(g, np.zeros((4, 3, 1)))
    assert batch.shape == (3, 3, 4)


def test_boltzmann_factor_products():
    g = RadialFunction.from_function(lambda r: np.full_like(r, 0.1), -1.0, 1, 0.1, 2.0)
    assert boltzmann(g, Configuration([0.0, 1.5, 3.0])) == pytest.approx(1.21)
    assert boltzmann(g, Configuration([0.0, 0.5])) == 0.0
    assert boltzmann(g, Configuration([0.0])) == 1.0


@pytest.mark.parametrize("m, count", [(1, 1), (2, 1), (3, 4), (4, 38), (5, 728)])
def test_connected_graph_counts(m, count):
    assert connected_graphs(m).shape[0] == count


def test_connected_graphs_beyond_largest_order():
    with pytest.raises(OrderTooLargeException):
        connected_graphs(config.M_MAX + 1)


def test_ursell_small_orders():
    g = hard_core(1, 0.1, 2.0)
    assert ursell_direct(g, Configuration(np.empty((0, 1)))) == 0.0
    assert ursell_direct(g, Configuration([0.3])) == 1.0
    assert ursell_direct(g, Configuration([0.0, 0.5])) == -1.0
    assert ursell_direct(g, Configuration([0.0, 1.5])) == 0.0


def test_three_overlapping_rods():
    # three paths with value 1 and the triangle with value -1
    g = hard_core(1, 0.1, 2.0)
    x = Configuration([0.0, 0.5, 0.9])
    for value in all_evaluators(g, x):
        assert value == pytest.approx(2.0, **TIGHT)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_evaluators_agree_on_overlapping_points(m, rng):
    g = random_bond(rng)
    x = Configuration(rng.uniform(-1.5, 1.5, size=(m, 1)))
    direct, recurrence, batch = all_evaluators(g, x)
    assert recurrence == pytest.approx(direct, **TIGHT)
    assert batch == pytest.approx(direct, **TIGHT)


@pytest.mark.parametrize("dimension", [2, 3])
def test_evaluators_agree_on_separated_points(dimension, rng):
    g = random_bond(rng, dimension)
    x = Configuration(random_separated_points(rng, 4, dimension, spread=1.5))
    direct, recurrence, batch = all_evaluators(g, x)
    assert recurrence == pytest.approx(direct, **TIGHT)
    assert batch == pytest.approx(direct, **TIGHT)


def test_evaluators_agree_on_random_configurations(rng):
    for sample in range(200):
        g = random_bond(rng)
        total = int(rng.integers(2, 6))
        if sample % 2 == 0:
            x = separated_line(rng, total)
        else:
            x = Configuration(rng.uniform(-1.5, 1.5, size=(total, 1)))
        direct, recurrence, batch = all_evaluators(g, x)
        assert recurrence == pytest.approx(direct, **TIGHT)
        assert batch == pytest.approx(direct, **TIGHT)

        split = int(rng.integers(1, total))
        head, tail = x.prefix(split), Configuration(x.points[split:])
        assert ursell_recurrence(g, head, tail) == pytest.approx(relative_boltzmann(g, head, tail), **TIGHT)


def test_recurrence_vanishes_when_the_head_overlaps():
    g = hard_core(1, 0.1, 2.0)
    head = Configuration([0.0, 0.5])
    for tail in (Configuration([1.2]), Configuration([1.2, -1.1]), Configuration([3.0, 4.5, -1.5])):
        assert ursell_recurrence(g, head, tail) == 0.0
        assert relative_boltzmann(g, head, tail) == 0.0
    # the same pair is not a dead end once it sits in the tail
    assert ursell_recurrence(g, Configuration([0.0]), Configuration([0.5])) == -1.0


def test_ursell_is_symmetric_and_translation_invariant(rng):
    g = random_bond(rng, 2)
    x = Configuration(rng.uniform(-1.5, 1.5, size=(4, 2)))
    reference = ursell_direct(g, x)
    assert ursell_direct(g, x.permuted([2, 0, 3, 1])) == pytest.approx(reference, **TIGHT)
    assert ursell_direct(g, x.shifted([10.0, -3.0])) == pytest.approx(reference, **TIGHT)


def test_ursell_vanishes_for_disconnected_configurations(rng):
    g = random_bond(rng)
    x = Configuration([0.0, 0.7, 1.4, 10.0])
    for value in all_evaluators(g, x):
        assert value == pytest.approx(0.0, abs=1e-12)


def test_ursell_batch_over_many_configurations(rng):
    g = random_bond(rng)
    points = rng.uniform(-2.0, 2.0, size=(50, 3, 1))
    batch = ursell_batch(g, points)
    for row, value in zip(points, batch):
        assert value == pytest.approx(ursell_direct(g, Configuration(row)), **TIGHT)


def test_partition_sum_and_inverse_are_inverse(rng):
    weights = rng.normal(size=1 << 4)
    weights[0] = 0.0
    back = partition_inverse(partition_sum(weights))
    np.testing.assert_allclose(back[1:], weights[1:], rtol=1e-12, atol=1e-12)


def test_partition_sum_of_ones_counts_set_partitions():
    # Bell numbers
    sums = partition_sum(np.ones(1 << 4))
    assert [sums[(1 << k) - 1] for k in range(5)] == [1, 1, 2, 5, 15]


def test_gamma_of_ursell_sequence_gives_boltzmann_factors(rng):
    g = random_bond(rng)
    x = Configuration(rng.uniform(-1.5, 1.5, size=(4, 1)))
    assert gamma(ursell_sequence(g, 4))(x) == pytest.approx(boltzmann(g, x), **TIGHT)


def test_star_with_unit_is_identity(rng):
    g = random_bond(rng)
    unit = TruncatedSequence(3, 1.0, tuple(lambda x: 0.0 for _ in range(3)))
    psi = boltzmann_sequence(g, 3)
    x = Configuration(rng.uniform(-1.5, 1.5, size=(3, 1)))
    assert star(unit, psi)(x) == pytest.approx(psi(x), **TIGHT)
    assert star(unit, psi).scalar == 1.0


def test_star_of_two_pair_sequences():
    ones = TruncatedSequence(2, 1.0, (lambda x: 1.0, lambda x: 1.0))
    # subsets of two points: 1*1 + 1*1 + 1*1 + 1*1
    assert star(ones, ones)(Configuration([0.0, 5.0])) == 4.0


def test_star_splits_two_points_two_ways():
    phi = TruncatedSequence(2, 0.0, (lambda x: 1.0, lambda x: 0.0))
    assert star(phi, phi)(Configuration([0.0, 5.0])) == 2.0


def test_star_is_commutative(rng):
    for order in (1, 2, 3):
        first = random_sequence(rng, order, scalar=rng.uniform(-1.0, 1.0))
        second = random_sequence(rng, order, scalar=rng.uniform(-1.0, 1.0))
        x = Configuration(rng.uniform(-2.0, 2.0, size=(order, 1)))
        assert star(first, second)(x) == pytest.approx(star(second, first)(x), **TIGHT)


def test_gamma_of_two_points(rng):
    phi = random_sequence(rng, 2)
    x = Configuration([0.3, -1.7])
    expected = phi(x) + phi(x.prefix(1)) * phi(Configuration([-1.7]))
    assert gamma(phi)(x) == pytest.approx(expected, **TIGHT)


def test_gamma_inverse_undoes_gamma(rng):
    for order in range(1, 6):
        phi = random_sequence(rng, order)
        back = gamma_inverse(gamma(phi))
        assert back.scalar == 0.0
        for m in range(1, order + 1):
            x = Configuration(rng.uniform(-2.0, 2.0, size=(m, 1)))
            assert back(x) == pytest.approx(phi(x), rel=1e-10, abs=1e-12)


def test_sequence_order_is_enforced():
    ones = TruncatedSequence(2, 1.0, (lambda x: 1.0, lambda x: 1.0))
    with pytest.raises(ValueError):
        ones(Configuration([0.0, 1.0, 2.0]))


def test_ursell_direct_beyond_largest_order():
    with pytest.raises(OrderTooLargeException):
        ursell_direct(hard_core(1, 0.1, 2.0), Configuration(np.arange(config.M_MAX + 1.0)))


def test_debug_table_rows(rng):
    g = random_bond(rng)
    rows = debug_table(g, Configuration([0.0, 0.5, 1.2]))
    assert [row["m"] for row in rows] == [1, 2, 3]
    for row in rows:
        assert row["recurrence"] == pytest.approx(row["connected_graphs"], **TIGHT)
        assert row["gamma_inverse"] == pytest.approx(row["connected_graphs"], **TIGHT)


def test_bound_diagnostic_of_hard_rod_integrals():
    table = UrsellTable(SeriesKind.A, {1: IntegralEstimate(-2.0, 0.0), 2: IntegralEstimate(9.0, 0.0)})
    diagnostic = bound_diagnostic(table)
    assert diagnostic.magnitudes == {1: 2.0, 2: 4.5}
    assert diagnostic.ratios == {2: pytest.approx(2.25)}
    assert diagnostic.finite
