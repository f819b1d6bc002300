import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize, rosen, rosen_der

from qpix import bfgs


def quadratic(a, b):
    def f(x):
        return 0.5 * x @ a @ x - b @ x, a @ x - b
    return f


def test_quadratic_minimum(rng):
    m = rng.normal(size=(6, 6))
    a = m @ m.T + 6 * np.eye(6)
    b = rng.normal(size=6)
    res = bfgs.minimize(quadratic(a, b), np.zeros(6), grad_tol=1e-10)
    assert res.converged
    np.testing.assert_allclose(res.x, np.linalg.solve(a, b), atol=1e-9)


def test_rosenbrock_against_scipy():
    x0 = np.array([-1.2, 1.0, -0.5, 0.8])
    ours = bfgs.minimize(lambda x: (rosen(x), rosen_der(x)), x0, max_iter=2000,
                         grad_tol=1e-9)
    ref = scipy_minimize(rosen, x0, jac=rosen_der, method="BFGS",
                         options={"gtol": 1e-9, "maxiter": 2000})
    assert ours.converged
    np.testing.assert_allclose(ours.x, ref.x, atol=1e-6)
    np.testing.assert_allclose(ours.x, np.ones(4), atol=1e-6)


def test_monotone_history(rng):
    res = bfgs.minimize(lambda x: (rosen(x), rosen_der(x)), rng.normal(size=5), max_iter=300)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_zero_gradient_start_does_not_move():
    a = np.eye(3)
    res = bfgs.minimize(quadratic(a, np.zeros(3)), np.zeros(3))
    assert res.iterations == 0
    np.testing.assert_array_equal(res.x, np.zeros(3))


def test_maxiter_status():
    res = bfgs.minimize(lambda x: (rosen(x), rosen_der(x)), np.full(6, -1.0), max_iter=3)
    assert res.status == "maxiter"
    assert res.iterations == 3


def test_strong_wolfe_conditions():
    f = quadratic(np.diag([1.0, 10.0]), np.zeros(2))
    x = np.array([1.0, 1.0])
    f0, g = f(x)
    p = -g

    def phi(t):
        fv, gv = f(x + t * p)
        return fv, gv @ p, None

    out = bfgs.strong_wolfe(phi, f0, g @ p)
    t, ft, _ = out
    assert ft <= f0 + 1e-4 * t * (g @ p)
    assert abs(phi(t)[1]) <= 0.9 * abs(g @ p)
