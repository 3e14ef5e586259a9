"""Pure numpy fallback for the interpolation and inversion kernels.

Same formulas and loop structure as the compiled backend so the two
produce matching results; only the batching strategy differs.
"""

import numpy as np


def _weights(u):
    v = 1.0 - u
    w0 = v * v * v / 6.0
    w1 = (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0
    w2 = (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0
    w3 = u * u * u / 6.0
    return w0, w1, w2, w3


def _dweights(u):
    w0 = -0.5 * (1.0 - u) * (1.0 - u)
    w1 = 1.5 * u * u - 2.0 * u
    w2 = -1.5 * u * u + u + 0.5
    w3 = 0.5 * u * u
    return w0, w1, w2, w3


def bspline_eval(coef, h, x, y):
    """Evaluate the periodic bicubic spline at arbitrary points."""
    coef = np.asarray(coef)
    n0, n1 = coef.shape
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    tx = np.ravel(x) / h
    ty = np.ravel(np.asarray(y, dtype=np.float64)) / h
    i0 = np.floor(tx).astype(np.int64)
    j0 = np.floor(ty).astype(np.int64)
    wx = _weights(tx - i0)
    wy = _weights(ty - j0)
    out = np.zeros(tx.shape, dtype=np.float64)
    for p in range(4):
        row = (i0 + (p - 1)) % n0
        acc = np.zeros_like(out)
        for q in range(4):
            col = (j0 + (q - 1)) % n1
            acc += wy[q] * coef[row, col]
        out += wx[p] * acc
    return out.reshape(shape)


def bspline_eval_grad(coef, h, x, y):
    """Evaluate the spline together with its gradient."""
    coef = np.asarray(coef)
    n0, n1 = coef.shape
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    tx = np.ravel(x) / h
    ty = np.ravel(np.asarray(y, dtype=np.float64)) / h
    i0 = np.floor(tx).astype(np.int64)
    j0 = np.floor(ty).astype(np.int64)
    ux = tx - i0
    uy = ty - j0
    wx, dwx = _weights(ux), _dweights(ux)
    wy, dwy = _weights(uy), _dweights(uy)
    val = np.zeros(tx.shape, dtype=np.float64)
    gx = np.zeros_like(val)
    gy = np.zeros_like(val)
    for p in range(4):
        row = (i0 + (p - 1)) % n0
        acc_v = np.zeros_like(val)
        acc_y = np.zeros_like(val)
        for q in range(4):
            col = (j0 + (q - 1)) % n1
            g = coef[row, col]
            acc_v += wy[q] * g
            acc_y += dwy[q] * g
        val += wx[p] * acc_v
        gx += dwx[p] * acc_v
        gy += wx[p] * acc_y
    return val.reshape(shape), (gx / h).reshape(shape), (gy / h).reshape(shape)


def invert_displacement(c1, c2, h, px, py, tol, maxiter):
    """Newton-invert p -> p + u(p) at the target points (px, py).

    u is the displacement field given through its spline coefficients
    (c1, c2).  Points that reach |residual| < tol are frozen so repeated
    runs and the compiled backend agree.  Returns the preimages and the
    final residual per point.
    """
    px = np.asarray(px, dtype=np.float64)
    shape = px.shape
    px = np.ravel(px)
    py = np.ravel(np.asarray(py, dtype=np.float64))
    qx = px - bspline_eval(c1, h, px, py).ravel()
    qy = py - bspline_eval(c2, h, px, py).ravel()
    res = np.full(px.shape, np.inf)
    for _ in range(maxiter):
        u1, a11, a12 = bspline_eval_grad(c1, h, qx, qy)
        u2, a21, a22 = bspline_eval_grad(c2, h, qx, qy)
        rx = qx + u1 - px
        ry = qy + u2 - py
        res = np.maximum(np.abs(rx), np.abs(ry))
        active = res >= tol
        if not active.any():
            break
        det = (1.0 + a11) * (1.0 + a22) - a12 * a21
        stepx = ((1.0 + a22) * rx - a12 * ry) / det
        stepy = (-a21 * rx + (1.0 + a11) * ry) / det
        qx = np.where(active, qx - stepx, qx)
        qy = np.where(active, qy - stepy, qy)
    else:
        u1 = bspline_eval(c1, h, qx, qy)
        u2 = bspline_eval(c2, h, qx, qy)
        res = np.maximum(np.abs(qx + u1 - px), np.abs(qy + u2 - py))
    return qx.reshape(shape), qy.reshape(shape), res.reshape(shape)
