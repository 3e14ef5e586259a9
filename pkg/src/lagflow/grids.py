"""Periodic grids and discrete calculus on the flat torus [0, 2pi)^2.

Scalar fields, vector fields and one-forms are sampled on a uniform
n x n grid with spacing h = 2pi/n; array axis 0 is the x direction and
axis 1 is the y direction.  Partial derivatives are either spectral
(FFT, exact for trigonometric polynomials of degree below n/2) or
fourth-order centered finite differences, chosen per grid.  Off-grid
values come from a periodic bicubic spline that reproduces the samples
at the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import signal

from . import _kernels

TWO_PI = 2.0 * np.pi

SCHEME_SPECTRAL = "spectral"
SCHEME_CENTERED4 = "centered4"
SCHEMES = (SCHEME_SPECTRAL, SCHEME_CENTERED4)

AXIS_X = "x"
AXIS_Y = "y"

X_CYCLE = "x"
Y_CYCLE = "y"


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid: n samples per axis, derivative scheme."""

    n: int
    scheme: str = SCHEME_SPECTRAL

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise GridError(f"grid size must be an integer, got {self.n!r}")
        if self.n < 8 or self.n % 2 != 0:
            raise GridError(f"grid size must be even and >= 8, got {self.n}")
        if self.scheme not in SCHEMES:
            raise GridError(f"unknown derivative scheme {self.scheme!r}; expected one of {SCHEMES}")

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    def axis_nodes(self) -> np.ndarray:
        return self.h * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        ax = self.axis_nodes()
        return np.meshgrid(ax, ax, indexing="ij")


def _check_values(grid: GridSpec, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (grid.n, grid.n):
        raise GridError(f"field shape {arr.shape} does not match grid n={grid.n}")
    if not np.isfinite(arr).all():
        raise GridError("field contains non-finite values")
    return arr


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values))

    @cached_property
    def _spline(self) -> "PeriodicSpline":
        return PeriodicSpline(self.values, self.grid.h)

    def sampler(self) -> "PeriodicSpline":
        return self._spline


@dataclass(frozen=True)
class VectorField2:
    """Vector field with components along x and y."""

    grid: GridSpec
    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.grid != self.grid or self.y.grid != self.grid:
            raise GridError("vector field components live on a different grid")

    @classmethod
    def from_arrays(cls, grid: GridSpec, x, y) -> "VectorField2":
        return cls(grid, ScalarField(grid, x), ScalarField(grid, y))


@dataclass(frozen=True)
class OneForm:
    """One-form a dx + b dy."""

    grid: GridSpec
    a: ScalarField
    b: ScalarField

    def __post_init__(self):
        if self.a.grid != self.grid or self.b.grid != self.grid:
            raise GridError("one-form components live on a different grid")

    @classmethod
    def from_arrays(cls, grid: GridSpec, a, b) -> "OneForm":
        return cls(grid, ScalarField(grid, a), ScalarField(grid, b))

    @classmethod
    def zero(cls, grid: GridSpec) -> "OneForm":
        z = np.zeros((grid.n, grid.n))
        return cls.from_arrays(grid, z, z.copy())


class PeriodicSpline:
    """Periodic bicubic interpolant of one sample grid.

    Coefficients are prefiltered once at construction; evaluation and
    gradient queries run through the selected kernel backend.
    """

    def __init__(self, values: np.ndarray, h: float):
        self._coef = _kernels.bspline_coeffs(values)
        self._h = float(h)

    def at(self, x, y):
        return _kernels.bspline_eval(self._coef, self._h, x, y)

    def with_gradient(self, x, y):
        return _kernels.bspline_eval_grad(self._coef, self._h, x, y)


def _axis_index(axis: str) -> int:
    if axis == AXIS_X:
        return 0
    if axis == AXIS_Y:
        return 1
    raise GridError(f"axis must be 'x' or 'y', got {axis!r}")


def deriv_arrays(values: np.ndarray, axis: int, h: float, scheme: str) -> np.ndarray:
    """Differentiate along a grid axis; values may be a stack (..., n, n)."""
    a = values.ndim - 2 + axis
    if scheme == SCHEME_SPECTRAL:
        n = values.shape[a]
        spec = np.fft.rfft(values, axis=a)
        k = 1j * np.arange(n // 2 + 1, dtype=np.float64)
        k[-1] = 0.0  # Nyquist mode has no consistent odd derivative
        shape = [1] * values.ndim
        shape[a] = n // 2 + 1
        return np.fft.irfft(spec * k.reshape(shape), n=n, axis=a)
    if scheme == SCHEME_CENTERED4:
        f1 = np.roll(values, -1, axis=a)
        b1 = np.roll(values, 1, axis=a)
        f2 = np.roll(values, -2, axis=a)
        b2 = np.roll(values, 2, axis=a)
        return (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * h)
    raise GridError(f"unknown derivative scheme {scheme!r}")


def partial_derivative(field: ScalarField, axis: str) -> ScalarField:
    """Discrete partial derivative of a scalar field along 'x' or 'y'."""
    g = field.grid
    out = deriv_arrays(field.values, _axis_index(axis), g.h, g.scheme)
    return ScalarField(g, out)


def exterior_derivative(field: ScalarField) -> OneForm:
    """d(phi) = (dphi/dx) dx + (dphi/dy) dy with the grid's scheme."""
    g = field.grid
    da = deriv_arrays(field.values, 0, g.h, g.scheme)
    db = deriv_arrays(field.values, 1, g.h, g.scheme)
    return OneForm.from_arrays(g, da, db)


def integrate_torus(field: ScalarField) -> float:
    """Trapezoid rule over the torus; equals h^2 times the sample sum."""
    return float(field.grid.h ** 2 * field.values.sum())


def loop_periods(form: OneForm, cycle: str) -> np.ndarray:
    """Loop integrals of a one-form over every parallel copy of a cycle.

    For the x cycle each grid row y = const gives one loop; for the
    y cycle each column x = const does.  Returns the n individual loop
    values whose mean is the reported period.
    """
    h = form.grid.h
    if cycle == X_CYCLE:
        return h * form.a.values.sum(axis=0)
    if cycle == Y_CYCLE:
        return h * form.b.values.sum(axis=1)
    raise GridError(f"cycle must be 'x' or 'y', got {cycle!r}")


def cycle_period(form: OneForm, cycle: str) -> float:
    """Average loop integral of a one-form over the chosen cycle.

    Averaging over all parallel loops projects out the exact part of the
    form, so discrete periods of d(phi) vanish to roundoff under the
    spectral scheme.
    """
    return float(loop_periods(form, cycle).mean())


def form_periods(form: OneForm) -> tuple[float, float]:
    return cycle_period(form, X_CYCLE), cycle_period(form, Y_CYCLE)


def sample_periodic(field: ScalarField, x, y):
    """Periodic bicubic sample of a scalar field at off-grid points."""
    return field.sampler().at(x, y)


def spectral_upsample(values: np.ndarray, factor: int = 2) -> np.ndarray:
    """Resample periodic grid data onto a factor-times finer grid.

    Trigonometric interpolation via zero-padded FFT; exact for band-limited
    data, so it only transfers a field to a denser sampling.  Accepts stacks
    shaped (..., n, n).
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise GridError(f"upsampling factor must be a positive integer, got {factor!r}")
    arr = np.asarray(values, dtype=np.float64)
    if factor == 1:
        return arr.copy()
    out = signal.resample(arr, factor * arr.shape[-2], axis=-2)
    return signal.resample(out, factor * arr.shape[-1], axis=-1)
