import numpy as np
import pytest

from smcpace.continuation import CorrectorError, Curve, Settings, fd_jacobian


def circle(u):
    return np.array([u[0] ** 2 + u[1] ** 2 - 1.0])


def circle_jac(u):
    return np.array([[2 * u[0], 2 * u[1]]])


def test_fd_jacobian_matches_analytic():
    u = np.array([0.3, -0.7])
    np.testing.assert_allclose(fd_jacobian(circle, u), circle_jac(u), atol=1e-8)


@pytest.mark.parametrize("jac", [circle_jac, None], ids=["analytic", "fd"])
def test_curve_follows_the_unit_circle(jac):
    s = Settings(ds=0.05, ds_max=0.2, tol=1e-12, step_tol=1e-12)
    curve = Curve(circle, jac, np.ones(2), s)
    z = np.array([1.0, 0.0])
    t = curve.tangent(z)
    if t[1] < 0:
        t = -t
    ds = s.ds
    angle = 0.0
    for _ in range(200):
        z_new, t_new, used, ds = curve.step(z, t, ds)
        assert abs(circle(z_new)[0]) <= 1e-12
        assert np.linalg.norm(z_new - z) <= 2 * abs(used) + 1e-12
        # Tangent orientation is kept: the angle increases monotonically.
        step_angle = np.arctan2(z[0] * z_new[1] - z[1] * z_new[0], z @ z_new)
        assert step_angle > 0
        angle += step_angle
        z, t = z_new, t_new
        if angle > 2 * np.pi:
            break
    assert angle > 2 * np.pi


def test_locate_finds_the_zero_of_a_test_function():
    curve = Curve(circle, circle_jac, np.ones(2), Settings(tol=1e-13, step_tol=1e-13))
    th = 0.5 * np.pi - 0.05
    z0 = np.array([np.cos(th), np.sin(th)])
    t0 = np.array([-np.sin(th), np.cos(th)])
    z = curve.locate(z0, t0, 0.1, lambda u: u[0], xtol=1e-13)
    np.testing.assert_allclose(z, [0.0, 1.0], atol=1e-10)


def test_pinned_correction_and_scaling():
    # Scaled coordinates: the circle of radius 100 in the first component.
    def ellipse(u):
        return np.array([(u[0] / 100.0) ** 2 + u[1] ** 2 - 1.0])

    curve = Curve(ellipse, None, np.array([100.0, 1.0]), Settings(tol=1e-12, step_tol=1e-12))
    z, _ = curve.correct(np.array([0.5, 0.9]), np.zeros(2), fixed=(0, 0.6))
    assert z[0] == 0.6 and z[1] == pytest.approx(0.8, abs=1e-12)


def test_corrector_failure_is_reported():
    def no_solution(u):
        return np.array([u[0] ** 2 + u[1] ** 2 + 1.0])

    curve = Curve(no_solution, None, np.ones(2), Settings(max_iter=5, ds_min=1e-3))
    with pytest.raises(CorrectorError):
        curve.step(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 0.01)
