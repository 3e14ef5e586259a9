"""Prefilter shared by both interpolation backends."""

import numpy as np


def _spline_symbol(n: int) -> np.ndarray:
    return (4.0 + 2.0 * np.cos(2.0 * np.pi * np.arange(n) / n)) / 6.0


def bspline_coeffs(values: np.ndarray) -> np.ndarray:
    """Periodic cubic B-spline coefficients for an n x n sample grid.

    Solves (c[i-1] + 4 c[i] + c[i+1]) / 6 = f[i] along both axes with
    periodic wrap, diagonalized by the FFT.  Evaluating the B-spline sum
    with these coefficients reproduces the samples exactly at the nodes.
    """
    values = np.asarray(values, dtype=np.float64)
    n0, n1 = values.shape
    spec = np.fft.fft2(values)
    spec /= _spline_symbol(n0)[:, None]
    spec /= _spline_symbol(n1)[None, :]
    return np.ascontiguousarray(np.real(np.fft.ifft2(spec)))


def _pad_last_axis(spec: np.ndarray, factor: int) -> np.ndarray:
    # trigonometric zero padding with the Nyquist bin split symmetrically,
    # matching band-limited resampling of real even-length data
    n = spec.shape[-1]
    N = factor * n
    half = n // 2
    out = np.zeros(spec.shape[:-1] + (N,), dtype=np.complex128)
    out[..., :half] = spec[..., :half]
    out[..., half] = 0.5 * spec[..., half]
    out[..., N - half] = 0.5 * spec[..., half]
    out[..., N - half + 1 :] = spec[..., half + 1 :]
    return out


def refined_bspline_coeffs(values: np.ndarray, factor: int = 2) -> np.ndarray:
    """Spline coefficients on a factor-times finer grid in one FFT pass.

    Equivalent to bspline_coeffs(trigonometric upsample of values) but
    skips the intermediate inverse/forward transform pair.
    """
    values = np.asarray(values, dtype=np.float64)
    if factor == 1:
        return bspline_coeffs(values)
    n0, n1 = values.shape
    spec = _pad_last_axis(np.fft.fft2(values), factor)
    spec = np.swapaxes(_pad_last_axis(np.swapaxes(spec, 0, 1), factor), 0, 1)
    spec *= float(factor * factor)
    spec /= _spline_symbol(factor * n0)[:, None]
    spec /= _spline_symbol(factor * n1)[None, :]
    return np.ascontiguousarray(np.real(np.fft.ifft2(spec)))
