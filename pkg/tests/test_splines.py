import numpy as np
import pytest

from splines import (
    BSpline2D,
    DEFAULT_KNOTS,
    KnotVector,
    basis_eval,
    basis_matrix,
    fit_residual_rms,
    fit_spline,
    greville_times,
    in_convex_hull,
)


def test_basis_endpoint_and_bernstein_value():
    assert basis_eval(DEFAULT_KNOTS, 0, 0.0) == 1.0
    assert basis_eval(DEFAULT_KNOTS, 1, 0.5) == pytest.approx(0.375, abs=1e-12)
    assert basis_eval(DEFAULT_KNOTS, 3, 1.0) == 1.0


@pytest.mark.parametrize("kv", [DEFAULT_KNOTS, KnotVector.open_uniform(6), KnotVector.open_uniform(5, degree=2)])
def test_partition_of_unity(kv):
    taus = np.random.default_rng(3).uniform(0.0, 1.0, 1000)
    sums = basis_matrix(kv, np.append(taus, [0.0, 1.0])).sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12


def test_basis_rejects_bad_arguments():
    with pytest.raises(ValueError):
        basis_eval(DEFAULT_KNOTS, 4, 0.5)
    with pytest.raises(ValueError):
        basis_eval(DEFAULT_KNOTS, 0, 1.5)


@pytest.mark.parametrize("knots,degree", [
    ((0, 0, 0, 1, 1, 1, 1), 3),          # too few knots
    ((0, 0, 0, 0, 0.6, 0.4, 1, 1, 1, 1), 3),  # decreasing
    ((0, 0, 0, 0.1, 1, 1, 1, 1), 3),     # not open
])
def test_knot_vector_validation(knots, degree):
    with pytest.raises(ValueError):
        KnotVector(knots, degree)


def test_eval_endpoints_and_midpoint():
    spline = BSpline2D(DEFAULT_KNOTS, [(0, 0), (10, 0), (20, 1), (30, 2)])
    np.testing.assert_array_equal(spline.eval(0.0), [0.0, 0.0])
    np.testing.assert_allclose(spline.eval(1.0), [30.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(spline.eval(0.5), [15.0, 0.625], atol=1e-12)
    with pytest.raises(ValueError):
        spline.eval(-0.1)


def test_spline_requires_origin_first_point():
    with pytest.raises(ValueError, match="origin"):
        BSpline2D(DEFAULT_KNOTS, [(1, 0), (10, 0), (20, 1), (30, 2)])


def test_greville_times():
    np.testing.assert_allclose(greville_times(DEFAULT_KNOTS, 20.0), [0.0, 20 / 3, 40 / 3, 20.0])
    times = greville_times(KnotVector.open_uniform(7), 20.0)
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(20.0)


def test_fit_recovers_known_spline():
    truth = BSpline2D.from_coefficients([12.0, 0.4, 25.0, -1.0, 41.0, 2.5])
    t = np.linspace(0.0, 20.0, 21)
    pts = np.column_stack([t, [truth.at_time(ti) for ti in t]])
    fitted = fit_spline(pts, 20.0)
    np.testing.assert_allclose(fitted.coefficients(), truth.coefficients(), atol=1e-6)
    assert fit_residual_rms(fitted, pts) < 1e-6


def test_fit_straight_line_has_no_lateral_coefficients():
    t = np.arange(1.0, 21.0)
    pts = np.column_stack([t, 30.0 * t / 20.0, np.zeros_like(t)])
    fitted = fit_spline(pts, 20.0)
    assert np.max(np.abs(fitted.control_points[:, 1])) < 1e-6


def test_fit_underdetermined():
    with pytest.raises(ValueError, match="at least 3"):
        fit_spline([(5.0, 1.0, 0.0), (10.0, 2.0, 0.0)], 20.0)


def test_fit_rejects_times_outside_horizon():
    with pytest.raises(ValueError):
        fit_spline([(1.0, 1.0, 0.0), (10.0, 2.0, 0.0), (25.0, 3.0, 0.0)], 20.0)


def test_convex_hull_degenerate_cases():
    assert in_convex_hull(BSpline2D(DEFAULT_KNOTS, np.zeros((4, 2))))
    assert in_convex_hull(BSpline2D.from_coefficients([10.0, 0.0, 20.0, 0.0, 30.0, 0.0]))


def test_convex_hull_randomized():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        coeffs = rng.uniform(-50.0, 50.0, 6)
        assert in_convex_hull(BSpline2D.from_coefficients(coeffs), samples=100)
