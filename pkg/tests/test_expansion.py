import math

import numpy as np
import pytest

from enums import QuadratureScheme, SeriesKind
from expansion import (
    ActivityGuardException,
    QuadratureSpec,
    QuadratureUnderResolvedException,
    a_integrand,
    activity_guard,
    forward_cluster,
    geometric_tail,
    integrate_a,
    integrate_b,
    series_a,
    series_b,
    tensor_estimate,
    truncation_report,
)
from gcmc import extrapolate_density, tonks_density
from pairfn import RadialFunction, integral
from utils import random_bin_values


def test_spec_from_dict_parses_scheme():
    q = QuadratureSpec.from_dict({"scheme": "monte_carlo", "samples": 100}, seed=3, workers=None)
    assert q.scheme is QuadratureScheme.MONTE_CARLO
    assert q.samples == 100
    assert q.seed == 3
    assert q.to_dict()["scheme"] == "monte_carlo"


def test_scheme_choice():
    q = QuadratureSpec()
    assert q.scheme_for(3, 1) is QuadratureScheme.TENSOR_MIDPOINT
    assert q.scheme_for(4, 1) is QuadratureScheme.MONTE_CARLO
    assert q.scheme_for(1, 2) is QuadratureScheme.MONTE_CARLO


def test_box_radius_may_not_be_smaller_than_the_support(rods_with_bins):
    assert QuadratureSpec().radius_for(2, SeriesKind.A, rods_with_bins) == 4.0
    assert QuadratureSpec().radius_for(2, SeriesKind.B, rods_with_bins) == 6.0
    with pytest.raises(ValueError):
        QuadratureSpec(box_radius=3.0).radius_for(2, SeriesKind.A, rods_with_bins)


@pytest.mark.parametrize("dims, radius", [(1, 2.0), (2, 4.0), (3, 6.0)])
def test_tensor_step_is_a_unit_fraction(dims, radius):
    step = QuadratureSpec().tensor_step(dims, radius)
    assert step >= QuadratureSpec().spacing
    assert (1.0 / step) == pytest.approx(round(1.0 / step))


def test_first_rod_integral_is_exact(rods, quadrature):
    estimate = integrate_a(rods, 1, quadrature)
    assert estimate.value == -2.0
    assert estimate.error == 0.0


def test_second_rod_integral_on_the_tensor_grid(rods, quadrature):
    estimate = integrate_a(rods, 2, quadrature)
    assert estimate.value == pytest.approx(9.0, abs=1e-9)
    assert estimate.error == pytest.approx(0.0, abs=1e-9)


def test_larger_box_leaves_tensor_sum_unchanged(rods, quadrature):
    default = integrate_a(rods, 2, quadrature)
    larger = integrate_a(rods, 2, QuadratureSpec(box_radius=4.0, seed=quadrature.seed))
    assert larger.value == default.value


def test_third_rod_integral_by_monte_carlo(rods):
    q = QuadratureSpec(scheme=QuadratureScheme.MONTE_CARLO, seed=11)
    estimate = integrate_a(rods, 3, q)
    assert estimate.error > 0.0
    assert estimate.value == pytest.approx(-64.0, abs=max(6.0 * estimate.error, 3.0))


def test_monte_carlo_is_reproducible(rods):
    q = QuadratureSpec(scheme=QuadratureScheme.MONTE_CARLO, samples=500, seed=5)
    first = integrate_a(rods, 2, q)
    second = integrate_a(rods, 2, q)
    assert first.value == second.value
    assert first.error == second.error


def test_first_pair_term_of_hard_rods(rods_with_bins, quadrature):
    # 4 on the core, 2 - r on (1, 2)
    estimate = integrate_b(rods_with_bins, 1, quadrature)
    expected = np.concatenate([[4.0], 2.0 - rods_with_bins.radii])
    np.testing.assert_allclose(estimate.value, expected, atol=1e-9)


def test_series_b_value_lives_on_the_grid(rods_with_bins, quadrature):
    result = series_b(1e-3, rods_with_bins, 2, quadrature)
    assert result.kind is SeriesKind.B
    assert result.value.same_grid(rods_with_bins)
    assert result.value.core_value == pytest.approx(result.terms[0][0] + result.terms[1][0])
    np.testing.assert_allclose(result.table.entries[0].value, rods_with_bins.evaluate_radius(result.table.radii))


def test_series_a_of_hard_rods(rods, quadrature):
    z = 1e-3
    result = series_a(z, rods, 2, quadrature)
    assert result.value == pytest.approx(-2.0 + z * 4.5, rel=1e-12)
    assert result.table.orders == [1, 2]


def test_series_needs_positive_activity(rods, quadrature):
    with pytest.raises(ValueError):
        series_a(0.0, rods, 2, quadrature)
    with pytest.raises(ValueError):
        series_b(-1.0, rods, 2, quadrature)


def test_forward_map_matches_tonks_density(rods, quadrature):
    z = 1e-3
    result = forward_cluster(z, rods, 3, quadrature)
    assert result.omega1 == pytest.approx(tonks_density(z), rel=1e-8)
    # rho2 vanishes on the core: B = -2A - z A^2 = 4 - 13 z + ..
    assert result.omega2.core_value == pytest.approx(-(z**2) + z**3 * (4.0 - 13.0 * z), rel=1e-6)
    assert result.omega1_error < 1e-9
    assert result.to_dict()["ursell_bounds"]["a"]["magnitudes"][1] == pytest.approx(2.0)


def test_forward_map_matches_finite_rod_systems(rods, quadrature):
    z = 1e-3
    result = forward_cluster(z, rods, 3, quadrature)
    assert result.omega1 == pytest.approx(extrapolate_density(z, [50.0, 100.0]), rel=1e-4)


def test_activity_guard(rods, weak_tail):
    assert activity_guard(0.1, rods) == pytest.approx(0.2)
    # packing norm of the tail is 0.2
    assert activity_guard(0.1, weak_tail) == pytest.approx(0.22)


def test_forward_map_refuses_large_activity(rods, quadrature):
    with pytest.raises(ActivityGuardException) as error:
        forward_cluster(0.3, rods, 2, quadrature)
    assert error.value.guard == pytest.approx(0.6)


def test_forward_map_with_force(rods, quadrature):
    result = forward_cluster(0.3, rods, 2, quadrature, force=True)
    assert result.guard == pytest.approx(0.6)
    assert result.omega1 == pytest.approx(0.3 + 0.09 * (-2.0 + 0.3 * 4.5))


def test_under_resolved_monte_carlo_is_reported(rods):
    q = QuadratureSpec(scheme=QuadratureScheme.MONTE_CARLO, samples=4, under_resolved_fraction=1e-6)
    with pytest.raises(QuadratureUnderResolvedException) as error:
        series_a(1e-3, rods, 2, q)
    assert error.value.kind is SeriesKind.A
    assert error.value.error > error.value.scale * 1e-6


def test_geometric_tail():
    assert geometric_tail(()) == (None, 0.0, "all remaining terms vanish")
    ratio, estimate, _ = geometric_tail((1.0,))
    assert ratio is None and estimate == math.inf
    ratio, estimate, _ = geometric_tail((1.0, 0.1))
    assert ratio == pytest.approx(0.1)
    assert estimate == pytest.approx(0.1 * 0.1 / 0.9)
    ratio, estimate, _ = geometric_tail((1.0, 2.0))
    assert estimate == math.inf
    assert geometric_tail((1.0, 0.0))[1] == 0.0
    # a growing ratio is extrapolated once more before the tail is summed
    ratio, estimate, _ = geometric_tail((1.0, 0.1, 0.02))
    assert ratio == pytest.approx(0.2)
    assert estimate == pytest.approx(0.02 * 0.4 / 0.6)
    assert geometric_tail((1.0, 0.1, 0.01))[1] == pytest.approx(0.01 * 0.1 / 0.9)


def test_truncation_report_of_small_activity(rods, quadrature):
    report = truncation_report(series_a(1e-3, rods, 3, quadrature))
    assert report.reliable
    assert report.ratio < 0.01
    assert report.to_dict()["combined"] == report.estimate + report.quadrature


def test_tensor_and_monte_carlo_agree(weak_tail, quadrature):
    tensor = integrate_a(weak_tail, 2, quadrature)
    sampled = integrate_a(weak_tail, 2, QuadratureSpec(scheme=QuadratureScheme.MONTE_CARLO, replicates=32, seed=11))
    assert sampled.error > 0.0
    assert abs(sampled.value - tensor.value) <= 3.0 * math.hypot(sampled.error, tensor.error)


def test_refined_tensor_step_converges(rng):
    g = RadialFunction(1, 0.1, 2.0, random_bin_values(rng, 10, 0.2), -1.0)
    jumps = np.abs(np.diff(np.concatenate([[g.core_value], g.values, [0.0]]))).sum()
    steps, errors = [], []
    for spacing in (0.3, 0.15, 0.07, 0.03):
        q = QuadratureSpec(spacing=spacing, seed=7)
        steps.append(q.tensor_step(1, 2.0))
        errors.append(abs(tensor_estimate(a_integrand(g, 1), 1, 2.0, q).value - integral(g)))
    assert steps == sorted(steps, reverse=True)
    assert steps[-1] < steps[0] / 5.0
    # every misplaced bin edge costs at most its jump times one step, once on each side
    for step, error in zip(steps, errors):
        assert error <= 2.0 * step * jumps + 1e-12
    assert errors[-1] <= 0.1 * jumps


def test_next_order_lies_within_the_truncation_estimate(rods, quadrature):
    z = 1e-3
    third = series_a(z, rods, 3, quadrature)
    fourth = series_a(z, rods, 4, quadrature)
    report = truncation_report(third)
    assert report.reliable
    assert abs(fourth.value - third.value) <= report.combined + 3.0 * fourth.quadrature_error_estimate
    # the fourth rod integral is 625, so the next term is z^3 625 / 24
    assert fourth.value - third.value == pytest.approx(z**3 * 625.0 / 24.0, rel=0.25)
