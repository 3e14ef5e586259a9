# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled periodic bicubic spline kernels.

Hot path of the flow solver: off-grid sampling of displacement fields and
the per-node Newton inversion used by re-graphing.  Mirrors _pykernels.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


cdef inline void _w(double u, double* w) nogil:
    cdef double v = 1.0 - u
    w[0] = v * v * v / 6.0
    w[1] = (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0
    w[2] = (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0
    w[3] = u * u * u / 6.0


cdef inline void _dw(double u, double* w) nogil:
    w[0] = -0.5 * (1.0 - u) * (1.0 - u)
    w[1] = 1.5 * u * u - 2.0 * u
    w[2] = -1.5 * u * u + u + 0.5
    w[3] = 0.5 * u * u


cdef inline double _reduce(double t, long n) nogil:
    # exact periodic reduction: n is a small integer, so subtracting k*n is
    # an exact float operation and the fractional part of t is preserved
    t -= floor(t / n) * n
    if t < 0.0:
        t += n
    elif t >= n:
        t -= n
    return t


cdef inline void _stencil(double t, long n, double* w, Py_ssize_t* idx) nogil:
    cdef long i0 = <long> t
    cdef long j
    cdef int p
    _w(t - i0, w)
    for p in range(4):
        j = i0 + p - 1
        if j < 0:
            j += n
        elif j >= n:
            j -= n
        idx[p] = j


cdef inline double _eval_point(const double[:, ::1] coef, long n0, long n1,
                               double h, double x, double y) nogil:
    cdef double wx[4]
    cdef double wy[4]
    cdef Py_ssize_t rows[4]
    cdef Py_ssize_t cols[4]
    cdef int p
    cdef double acc, out = 0.0
    _stencil(_reduce(x / h, n0), n0, wx, rows)
    _stencil(_reduce(y / h, n1), n1, wy, cols)
    for p in range(4):
        acc = (wy[0] * coef[rows[p], cols[0]] + wy[1] * coef[rows[p], cols[1]]
               + wy[2] * coef[rows[p], cols[2]] + wy[3] * coef[rows[p], cols[3]])
        out += wx[p] * acc
    return out


cdef inline void _eval_grad_point(const double[:, ::1] coef, long n0, long n1,
                                  double h, double x, double y,
                                  double* val, double* gx, double* gy) nogil:
    cdef double tx = _reduce(x / h, n0)
    cdef double ty = _reduce(y / h, n1)
    cdef double wx[4]
    cdef double wy[4]
    cdef double dwx[4]
    cdef double dwy[4]
    cdef Py_ssize_t rows[4]
    cdef Py_ssize_t cols[4]
    cdef int p
    cdef double g0, g1, g2, g3, acc_v, acc_y
    cdef double v = 0.0, dx = 0.0, dy = 0.0
    _stencil(tx, n0, wx, rows)
    _stencil(ty, n1, wy, cols)
    _dw(tx - <long> tx, dwx)
    _dw(ty - <long> ty, dwy)
    for p in range(4):
        g0 = coef[rows[p], cols[0]]
        g1 = coef[rows[p], cols[1]]
        g2 = coef[rows[p], cols[2]]
        g3 = coef[rows[p], cols[3]]
        acc_v = wy[0] * g0 + wy[1] * g1 + wy[2] * g2 + wy[3] * g3
        acc_y = dwy[0] * g0 + dwy[1] * g1 + dwy[2] * g2 + dwy[3] * g3
        v += wx[p] * acc_v
        dx += dwx[p] * acc_v
        dy += wx[p] * acc_y
    val[0] = v
    gx[0] = dx / h
    gy[0] = dy / h


cdef inline void _grad_pair(const double[:, ::1] c1, const double[:, ::1] c2,
                            long n0, long n1, double h, double x, double y,
                            double* u1, double* g11, double* g12,
                            double* u2, double* g21, double* g22) nogil:
    # both displacement components share weights and stencil indices
    cdef double tx = _reduce(x / h, n0)
    cdef double ty = _reduce(y / h, n1)
    cdef double wx[4]
    cdef double wy[4]
    cdef double dwx[4]
    cdef double dwy[4]
    cdef Py_ssize_t rows[4]
    cdef Py_ssize_t cols[4]
    cdef int p
    cdef double a0, a1, a2, a3, b0, b1, b2, b3, av, ay, bv, by
    cdef double v1 = 0.0, dx1 = 0.0, dy1 = 0.0
    cdef double v2 = 0.0, dx2 = 0.0, dy2 = 0.0
    _stencil(tx, n0, wx, rows)
    _stencil(ty, n1, wy, cols)
    _dw(tx - <long> tx, dwx)
    _dw(ty - <long> ty, dwy)
    for p in range(4):
        a0 = c1[rows[p], cols[0]]
        a1 = c1[rows[p], cols[1]]
        a2 = c1[rows[p], cols[2]]
        a3 = c1[rows[p], cols[3]]
        b0 = c2[rows[p], cols[0]]
        b1 = c2[rows[p], cols[1]]
        b2 = c2[rows[p], cols[2]]
        b3 = c2[rows[p], cols[3]]
        av = wy[0] * a0 + wy[1] * a1 + wy[2] * a2 + wy[3] * a3
        ay = dwy[0] * a0 + dwy[1] * a1 + dwy[2] * a2 + dwy[3] * a3
        bv = wy[0] * b0 + wy[1] * b1 + wy[2] * b2 + wy[3] * b3
        by = dwy[0] * b0 + dwy[1] * b1 + dwy[2] * b2 + dwy[3] * b3
        v1 += wx[p] * av
        dx1 += dwx[p] * av
        dy1 += wx[p] * ay
        v2 += wx[p] * bv
        dx2 += dwx[p] * bv
        dy2 += wx[p] * by
    u1[0] = v1
    g11[0] = dx1 / h
    g12[0] = dy1 / h
    u2[0] = v2
    g21[0] = dx2 / h
    g22[0] = dy2 / h


def bspline_eval(coef, double h, x, y):
    cdef cnp.ndarray[double, ndim=2, mode="c"] c = np.ascontiguousarray(coef, dtype=np.float64)
    xa = np.asarray(x, dtype=np.float64)
    shape = xa.shape
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(np.ravel(xa))
    cdef cnp.ndarray[double, ndim=1] yf = np.ascontiguousarray(np.ravel(np.asarray(y, dtype=np.float64)))
    cdef Py_ssize_t m = xf.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(m, dtype=np.float64)
    cdef long n0 = c.shape[0], n1 = c.shape[1]
    cdef Py_ssize_t k
    cdef const double[:, ::1] cv = c
    with nogil:
        for k in range(m):
            out[k] = _eval_point(cv, n0, n1, h, xf[k], yf[k])
    return out.reshape(shape)


def bspline_eval_grad(coef, double h, x, y):
    cdef cnp.ndarray[double, ndim=2, mode="c"] c = np.ascontiguousarray(coef, dtype=np.float64)
    xa = np.asarray(x, dtype=np.float64)
    shape = xa.shape
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(np.ravel(xa))
    cdef cnp.ndarray[double, ndim=1] yf = np.ascontiguousarray(np.ravel(np.asarray(y, dtype=np.float64)))
    cdef Py_ssize_t m = xf.shape[0]
    cdef cnp.ndarray[double, ndim=1] val = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gx = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gy = np.empty(m, dtype=np.float64)
    cdef long n0 = c.shape[0], n1 = c.shape[1]
    cdef Py_ssize_t k
    cdef double v, dx, dy
    cdef const double[:, ::1] cv = c
    with nogil:
        for k in range(m):
            _eval_grad_point(cv, n0, n1, h, xf[k], yf[k], &v, &dx, &dy)
            val[k] = v
            gx[k] = dx
            gy[k] = dy
    return val.reshape(shape), gx.reshape(shape), gy.reshape(shape)


def invert_displacement(c1, c2, double h, px, py, double tol, int maxiter):
    cdef cnp.ndarray[double, ndim=2, mode="c"] a1 = np.ascontiguousarray(c1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] a2 = np.ascontiguousarray(c2, dtype=np.float64)
    pxa = np.asarray(px, dtype=np.float64)
    shape = pxa.shape
    cdef cnp.ndarray[double, ndim=1] pxf = np.ascontiguousarray(np.ravel(pxa))
    cdef cnp.ndarray[double, ndim=1] pyf = np.ascontiguousarray(np.ravel(np.asarray(py, dtype=np.float64)))
    cdef Py_ssize_t m = pxf.shape[0]
    cdef cnp.ndarray[double, ndim=1] qxo = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] qyo = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ro = np.empty(m, dtype=np.float64)
    cdef long n0 = a1.shape[0], n1 = a1.shape[1]
    cdef const double[:, ::1] v1 = a1
    cdef const double[:, ::1] v2 = a2
    cdef Py_ssize_t k
    cdef int it
    cdef double qx, qy, u1, u2, g11, g12, g21, g22
    cdef double rx, ry, r, det, x0, y0
    with nogil:
        for k in range(m):
            x0 = pxf[k]
            y0 = pyf[k]
            qx = x0 - _eval_point(v1, n0, n1, h, x0, y0)
            qy = y0 - _eval_point(v2, n0, n1, h, x0, y0)
            it = 0
            while True:
                _grad_pair(v1, v2, n0, n1, h, qx, qy,
                           &u1, &g11, &g12, &u2, &g21, &g22)
                rx = qx + u1 - x0
                ry = qy + u2 - y0
                r = fabs(rx)
                if fabs(ry) > r:
                    r = fabs(ry)
                if r < tol or it >= maxiter:
                    break
                det = (1.0 + g11) * (1.0 + g22) - g12 * g21
                qx -= ((1.0 + g22) * rx - g12 * ry) / det
                qy -= (-g21 * rx + (1.0 + g11) * ry) / det
                it += 1
            qxo[k] = qx
            qyo[k] = qy
            ro[k] = r
    return qxo.reshape(shape), qyo.reshape(shape), ro.reshape(shape)
