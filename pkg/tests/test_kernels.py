"""Interpolation kernel backends: exactness, accuracy, backend parity."""

import numpy as np
import pytest
import scipy.ndimage

from lagflow import _kernels


def _grid(n):
    h = 2.0 * np.pi / n
    ax = h * np.arange(n)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    return h, X, Y


def test_reproduces_node_values():
    h, X, Y = _grid(32)
    f = np.exp(np.sin(X)) * np.cos(Y)
    c = _kernels.bspline_coeffs(f)
    v = _kernels.bspline_eval(c, h, X, Y)
    assert np.abs(v - f).max() < 1e-13


def test_constant_field_everywhere():
    h, X, Y = _grid(16)
    c = _kernels.bspline_coeffs(np.full((16, 16), 3.25))
    pts = np.linspace(-7.0, 13.0, 57)
    v = _kernels.bspline_eval(c, h, pts, np.sqrt(2.0) * pts)
    assert np.abs(v - 3.25).max() < 1e-13


def test_midpoint_accuracy_fourth_order():
    # closed-form reference sin(h/2); error must shrink ~16x per doubling
    errs = []
    for n in (32, 64):
        h, X, Y = _grid(n)
        c = _kernels.bspline_coeffs(np.sin(X))
        v = _kernels.bspline_eval(c, h, np.array([h / 2.0]), np.array([0.0]))
        errs.append(abs(v[0] - np.sin(h / 2.0)))
    assert errs[0] < 2e-5
    assert errs[0] / errs[1] > 10.0


def test_matches_scipy_map_coordinates():
    # independent route: scipy's periodic cubic B-spline interpolation
    n = 48
    h, X, Y = _grid(n)
    f = np.sin(2 * X) * np.cos(Y) + 0.3 * np.cos(X + Y)
    c = _kernels.bspline_coeffs(f)
    rng = np.random.default_rng(7)
    xq = rng.uniform(0, 2 * np.pi, 500)
    yq = rng.uniform(0, 2 * np.pi, 500)
    mine = _kernels.bspline_eval(c, h, xq, yq)
    pref = scipy.ndimage.spline_filter(f, order=3, mode="grid-wrap")
    ref = scipy.ndimage.map_coordinates(
        pref, np.vstack([xq / h, yq / h]), order=3, mode="grid-wrap", prefilter=False
    )
    assert np.abs(mine - ref).max() < 1e-11


def test_gradient_matches_closed_form():
    n = 64
    h, X, Y = _grid(n)
    f = np.sin(X) * np.cos(2 * Y)
    c = _kernels.bspline_coeffs(f)
    rng = np.random.default_rng(3)
    xq = rng.uniform(0, 2 * np.pi, 300)
    yq = rng.uniform(0, 2 * np.pi, 300)
    v, gx, gy = _kernels.bspline_eval_grad(c, h, xq, yq)
    # interpolant gradients are one order lower than values: O(h^3)
    assert np.abs(v - np.sin(xq) * np.cos(2 * yq)).max() < 1e-5
    assert np.abs(gx - np.cos(xq) * np.cos(2 * yq)).max() < 1e-4
    assert np.abs(gy + 2 * np.sin(xq) * np.sin(2 * yq)).max() < 5e-4


def test_gradient_consistent_with_finite_difference_of_spline():
    # the reported gradient must be the derivative of the interpolant itself
    n = 24
    h, X, Y = _grid(n)
    f = np.cos(X) + np.sin(X + 2 * Y)
    c = _kernels.bspline_coeffs(f)
    x0, y0 = np.array([1.234]), np.array([4.321])
    eps = 1e-6
    _, gx, gy = _kernels.bspline_eval_grad(c, h, x0, y0)
    fd_x = (_kernels.bspline_eval(c, h, x0 + eps, y0) - _kernels.bspline_eval(c, h, x0 - eps, y0)) / (2 * eps)
    fd_y = (_kernels.bspline_eval(c, h, x0, y0 + eps) - _kernels.bspline_eval(c, h, x0, y0 - eps)) / (2 * eps)
    assert abs(gx[0] - fd_x[0]) < 1e-8
    assert abs(gy[0] - fd_y[0]) < 1e-8


def test_newton_inversion_roundtrip():
    n = 64
    h, X, Y = _grid(n)
    u1 = 0.12 * np.sin(Y) + 0.05 * np.cos(X)
    u2 = 0.1 * np.sin(X)
    c1, c2 = _kernels.bspline_coeffs(u1), _kernels.bspline_coeffs(u2)
    qx, qy, res = _kernels.invert_displacement(c1, c2, h, X, Y, 1e-12, 50)
    assert res.max() < 1e-11
    fx = qx + _kernels.bspline_eval(c1, h, qx, qy)
    fy = qy + _kernels.bspline_eval(c2, h, qx, qy)
    assert np.abs(fx - X).max() < 1e-11
    assert np.abs(fy - Y).max() < 1e-11


def test_backends_agree():
    if "compiled" not in _kernels.available_backends():
        pytest.skip("compiled backend not built")
    n = 40
    h, X, Y = _grid(n)
    f = np.sin(X) * np.sin(Y) + 0.2 * np.cos(3 * X)
    c = _kernels.bspline_coeffs(f)
    u1, u2 = 0.1 * np.sin(Y), 0.08 * np.cos(X)
    c1, c2 = _kernels.bspline_coeffs(u1), _kernels.bspline_coeffs(u2)
    xq = X + 0.37 * h
    yq = Y - 1.61 * h
    results = {}
    for backend in ("compiled", "python"):
        prev = _kernels.set_backend(backend)
        try:
            v = _kernels.bspline_eval(c, h, xq, yq)
            _, gx, gy = _kernels.bspline_eval_grad(c, h, xq, yq)
            qx, qy, res = _kernels.invert_displacement(c1, c2, h, X, Y, 1e-12, 50)
            results[backend] = (v, gx, gy, qx, qy)
        finally:
            _kernels.set_backend(prev)
    for a, b in zip(results["compiled"], results["python"]):
        assert np.abs(a - b).max() < 1e-13
