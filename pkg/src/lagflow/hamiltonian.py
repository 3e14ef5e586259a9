"""Hamiltonian vector fields and the symplectic isotopies they generate.

A Hamiltonian G(x, y, s) enters as a parsed expression.  Its vector field is
the rotated gradient X_G = (dG/dy, -dG/dx), the unique field satisfying
i_{X_G} omega = dG for omega = dx ^ dy.  That sign convention is fixed once,
here; every flux and pairing downstream inherits it.

Isotopies are integrated node by node with the classical 4th-order one-step
scheme and stored as sampled paths of torus maps plus their Eulerian
velocities.  Linear Hamiltonians such as G = y are admitted even though they
are not single-valued on the torus: the linear part is split off analytically
(it contributes a constant translation velocity) and only the periodic
remainder is differentiated on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr
from .grids import (
    TWO_PI,
    GridSpec,
    PeriodicSpline,
    ScalarField,
    VectorField2,
    deriv_arrays,
    partial_derivative,
    sample_periodic,
    spectral_upsample,
)
from .torus_maps import TorusMap, compose, invert

__all__ = [
    "HamiltonianError",
    "HamiltonianSpec",
    "IsotopyError",
    "SymplecticIsotopy",
    "concatenate_isotopies",
    "eased_expression",
    "hamiltonian_vector_field",
    "integrate_isotopy",
    "isotopy_velocity",
    "time_one_map",
    "translation_isotopy",
]

# Base points used to probe an expression for a linear (non-periodic) part.
_PROBES = ((0.0, 0.0), (1.1, 0.7), (2.9, 1.3))
_SLOPE_TOL = 1e-9


class HamiltonianError(ValueError):
    """An expression cannot serve as a torus Hamiltonian."""


class IsotopyError(RuntimeError):
    """Isotopy integration failed or broke symplecticity."""


@dataclass(frozen=True)
class HamiltonianSpec:
    """A generating function G(x, y, s) held as a parsed expression."""

    ast: expr.ExprAst
    source: str
    autonomous: bool

    @classmethod
    def from_expression(cls, text: str) -> "HamiltonianSpec":
        ast = expr.parse(text)
        return cls(ast=ast, source=text, autonomous=not expr.uses_variable(ast, "s"))

    def linear_slopes(self, s: float = 0.0) -> tuple[float, float]:
        """Coefficients (alpha, beta) of the affine part alpha*x + beta*y.

        Probes the expression across one full period at several base points.
        A linear term is the only admissible non-periodic shape (it generates
        a rigid translation); anything else raises HamiltonianError.
        """
        slopes = []
        for axis in range(2):
            vals = []
            for px, py in _PROBES:
                qx, qy = (px + TWO_PI, py) if axis == 0 else (px, py + TWO_PI)
                lo = expr.evaluate(self.ast, x=px, y=py, s=s)
                hi = expr.evaluate(self.ast, x=qx, y=qy, s=s)
                vals.append((hi - lo) / TWO_PI)
            spread = max(vals) - min(vals)
            if spread > _SLOPE_TOL * max(1.0, abs(vals[0])):
                raise HamiltonianError(
                    f"Hamiltonian {self.source!r} is not periodic up to a linear"
                    f" term: period jump varies by {spread:.3e} across base points"
                )
            slopes.append(vals[0] if abs(vals[0]) > 1e-12 else 0.0)
        return slopes[0], slopes[1]

    def grid_values(self, grid: GridSpec, s: float = 0.0) -> ScalarField:
        """Raw samples of G(., ., s) on the grid."""
        return expr.evaluate_on_grid(self.ast, grid, s=s)

    def vector_field(self, grid: GridSpec, s: float = 0.0) -> VectorField2:
        """The field X with i_X omega = dG at parameter s.

        The linear part of G contributes the constant (beta, -alpha) exactly;
        the periodic remainder goes through the grid derivative scheme.
        """
        alpha, beta = self.linear_slopes(s)
        values = self.grid_values(grid, s=s).values
        if alpha != 0.0 or beta != 0.0:
            mx, my = grid.mesh()
            values = values - alpha * mx - beta * my
        base = hamiltonian_vector_field(ScalarField(grid, values))
        if alpha == 0.0 and beta == 0.0:
            return base
        return VectorField2.from_arrays(
            grid, base.x.values + beta, base.y.values - alpha
        )


def hamiltonian_vector_field(G: ScalarField) -> VectorField2:
    """Rotated gradient (dG/dy, -dG/dx) of a periodic scalar field."""
    gx = partial_derivative(G, "x")
    gy = partial_derivative(G, "y")
    return VectorField2(G.grid, x=gy, y=ScalarField(G.grid, -gx.values))


@dataclass(frozen=True)
class SymplecticIsotopy:
    """A path of symplectomorphisms f_s, s in [0, 1], sampled at m+1 nodes.

    maps[k] is f at s_nodes[k] (maps[0] the identity); velocities[k] is the
    Eulerian velocity X_s at the same node, expressed at base points.
    """

    grid: GridSpec
    s_nodes: np.ndarray
    maps: tuple[TorusMap, ...]
    velocities: tuple[VectorField2, ...]

    def __post_init__(self):
        if not (len(self.maps) == len(self.velocities) == len(self.s_nodes)):
            raise ValueError("node, map, and velocity counts must match")
        u0 = self.maps[0].u
        if np.abs(u0.x.values).max() != 0.0 or np.abs(u0.y.values).max() != 0.0:
            raise ValueError("isotopy must start at the identity")

    @property
    def m(self) -> int:
        return len(self.maps) - 1


class _StageCache:
    """Velocity fields at half-step s values, keyed by half-step index.

    Autonomous Hamiltonians collapse to a single cached field; s-dependent
    ones keep only the sliding window a step needs.  Sampling splines are
    built on a 2x trigonometrically refined grid: independently splined
    components carry an O(h^4) divergence bias that would cap the flow's
    symplecticity, and refining before splining cuts it 16-fold.
    """

    def __init__(self, spec: HamiltonianSpec, grid: GridSpec, m: int):
        self._spec = spec
        self._grid = grid
        self._m = m
        self._entries: dict[int, tuple[VectorField2, object, object]] = {}

    def _entry(self, j: int):
        key = 0 if self._spec.autonomous else j
        entry = self._entries.get(key)
        if entry is None:
            s = 0.0 if self._spec.autonomous else j / (2.0 * self._m)
            field = self._spec.vector_field(self._grid, s=s)
            fine_h = 0.5 * self._grid.h
            entry = (
                field,
                PeriodicSpline(spectral_upsample(field.x.values), fine_h),
                PeriodicSpline(spectral_upsample(field.y.values), fine_h),
            )
            self._entries[key] = entry
        return entry

    def field(self, j: int) -> VectorField2:
        return self._entry(j)[0]

    def at(self, j: int, px: np.ndarray, py: np.ndarray):
        _, sx, sy = self._entry(j)
        return sx.at(px, py), sy.at(px, py)

    def drop_before(self, j: int) -> None:
        if not self._spec.autonomous:
            for key in [k for k in self._entries if k < j]:
                del self._entries[key]


def _max_defect(maps, grid: GridSpec) -> tuple[float, int]:
    """Largest |det Df - 1| over all maps, with the offending node index."""
    disp = np.stack([(f.u.x.values, f.u.y.values) for f in maps])
    dux = deriv_arrays(disp, 0, grid.h, grid.scheme)
    duy = deriv_arrays(disp, 1, grid.h, grid.scheme)
    det = (1.0 + dux[:, 0]) * (1.0 + duy[:, 1]) - duy[:, 0] * dux[:, 1]
    per_map = np.abs(det - 1.0).reshape(len(maps), -1).max(axis=1)
    worst = int(np.argmax(per_map))
    return float(per_map[worst]), worst


def integrate_isotopy(
    spec: HamiltonianSpec,
    grid: GridSpec,
    m: int,
    defect_tol: float = 1e-6,
) -> SymplecticIsotopy:
    """Integrate grid-node trajectories through X_G over s in [0, 1].

    Classical 4th-order stepping with m equal steps; velocity samples between
    grid nodes come from the periodic spline of the stage field.  Raises
    IsotopyError if a trajectory goes non-finite or any sampled map's
    symplectic defect exceeds defect_tol.
    """
    if m < 1:
        raise ValueError(f"step count must be >= 1, got {m}")
    ds = 1.0 / m
    mx, my = grid.mesh()
    px = mx.copy()
    py = my.copy()
    stages = _StageCache(spec, grid, m)
    maps = [TorusMap.identity(grid)]
    velocities = [stages.field(0)]
    for k in range(m):
        j0, jh, j1 = 2 * k, 2 * k + 1, 2 * k + 2
        k1x, k1y = stages.at(j0, px, py)
        k2x, k2y = stages.at(jh, px + 0.5 * ds * k1x, py + 0.5 * ds * k1y)
        k3x, k3y = stages.at(jh, px + 0.5 * ds * k2x, py + 0.5 * ds * k2y)
        k4x, k4y = stages.at(j1, px + ds * k3x, py + ds * k3y)
        px = px + (ds / 6.0) * (k1x + 2.0 * (k2x + k3x) + k4x)
        py = py + (ds / 6.0) * (k1y + 2.0 * (k2y + k3y) + k4y)
        if not (np.isfinite(px).all() and np.isfinite(py).all()):
            raise IsotopyError(f"trajectories went non-finite at step {k + 1} of {m}")
        maps.append(TorusMap.from_displacement(grid, px - mx, py - my))
        velocities.append(stages.field(j1))
        stages.drop_before(j1)
    defect, worst = _max_defect(maps, grid)
    if defect > defect_tol:
        raise IsotopyError(
            f"symplectic defect {defect:.3e} at node {worst} exceeds"
            f" tolerance {defect_tol:.3e}; refine the step count"
        )
    return SymplecticIsotopy(
        grid=grid,
        s_nodes=np.linspace(0.0, 1.0, m + 1),
        maps=tuple(maps),
        velocities=tuple(velocities),
    )


def time_one_map(iso: SymplecticIsotopy) -> TorusMap:
    """The endpoint f_1 of the isotopy."""
    return iso.maps[-1]


_D1_INTERIOR = (1.0, -8.0, 0.0, 8.0, -1.0)
_D1_EDGE0 = (-25.0, 48.0, -36.0, 16.0, -3.0)
_D1_EDGE1 = (-3.0, -10.0, 18.0, -6.0, 1.0)


def _stencil(npts: int, k: int):
    """d/ds stencil (indices, weights, denominator multiple of ds) at node k.

    4th order when five nodes are available, else the best the path allows.
    """
    if npts >= 5:
        if 2 <= k <= npts - 3:
            return range(k - 2, k + 3), _D1_INTERIOR, 12.0
        if k == 0:
            return range(0, 5), _D1_EDGE0, 12.0
        if k == 1:
            return range(0, 5), _D1_EDGE1, 12.0
        tail = range(npts - 5, npts)
        if k == npts - 2:
            return tail, tuple(-w for w in reversed(_D1_EDGE1)), 12.0
        return tail, tuple(-w for w in reversed(_D1_EDGE0)), 12.0
    if npts >= 3:
        if k == 0:
            return range(0, 3), (-3.0, 4.0, -1.0), 2.0
        if k == npts - 1:
            return range(npts - 3, npts), (1.0, -4.0, 3.0), 2.0
        return range(k - 1, k + 2), (-1.0, 0.0, 1.0), 2.0
    return range(0, 2), (-1.0, 1.0), 1.0


def isotopy_velocity(iso: SymplecticIsotopy, k: int) -> VectorField2:
    """Eulerian velocity at node k: X = (d/ds f_s) compose f_s^{-1}.

    Rebuilt from the stored map samples alone by differencing displacements
    in s and pulling the result back through the inverse map.  The stored
    iso.velocities come straight from the generator, so this reconstruction
    doubles as an independent consistency check and works for paths that were
    assembled without a known Hamiltonian.
    """
    m = iso.m
    if not 0 <= k <= m:
        raise IndexError(f"node index {k} outside 0..{m}")
    if m < 1:
        raise ValueError("velocity reconstruction needs at least two s-nodes")
    grid = iso.grid
    idx, weights, scale = _stencil(m + 1, k)
    ds = float(iso.s_nodes[1] - iso.s_nodes[0])
    dux = np.zeros((grid.n, grid.n))
    duy = np.zeros_like(dux)
    for i, w in zip(idx, weights):
        if w == 0.0:
            continue
        dux += w * iso.maps[i].u.x.values
        duy += w * iso.maps[i].u.y.values
    dux /= scale * ds
    duy /= scale * ds
    finv = invert(iso.maps[k])
    mx, my = grid.mesh()
    qx = mx + finv.u.x.values
    qy = my + finv.u.y.values
    vx = sample_periodic(ScalarField(grid, dux), qx, qy)
    vy = sample_periodic(ScalarField(grid, duy), qx, qy)
    return VectorField2.from_arrays(grid, vx, vy)


def translation_isotopy(
    grid: GridSpec,
    a: float,
    b: float,
    m: int = 16,
    smooth_ends: bool = False,
) -> SymplecticIsotopy:
    """Rigid translation path reaching (a, b) at s = 1.

    With smooth_ends the schedule tau(s) = s - sin(2 pi s)/(2 pi) is used;
    its speed 1 - cos(2 pi s) vanishes at both ends, so the path concatenates
    with other eased isotopies without a velocity jump.
    """
    if m < 1:
        raise ValueError(f"step count must be >= 1, got {m}")
    s = np.linspace(0.0, 1.0, m + 1)
    if smooth_ends:
        tau = s - np.sin(TWO_PI * s) / TWO_PI
        tau[0], tau[-1] = 0.0, 1.0  # clear roundoff so the endpoints are exact
        speed = 1.0 - np.cos(TWO_PI * s)
    else:
        tau = s
        speed = np.ones_like(s)
    maps = tuple(TorusMap.translation(grid, a * t, b * t) for t in tau)
    shape = (grid.n, grid.n)
    velocities = tuple(
        VectorField2.from_arrays(grid, np.full(shape, a * c), np.full(shape, b * c))
        for c in speed
    )
    return SymplecticIsotopy(grid=grid, s_nodes=s, maps=maps, velocities=velocities)


def eased_expression(text: str) -> str:
    """Reschedule an autonomous Hamiltonian to zero endpoint speed.

    Returns the s-dependent Hamiltonian (1 - cos(2 pi s)) * G.  Its flow
    traverses the same path with speed 1 - cos(2 pi s), which integrates to
    one over [0, 1], so the time-one map is unchanged while both endpoint
    velocities vanish.
    """
    ast = expr.parse(text)
    if expr.uses_variable(ast, "s"):
        raise HamiltonianError("easing requires an autonomous Hamiltonian (no s)")
    return f"(1 - cos(2*pi*s)) * ({text})"


def _scaled(v: VectorField2, c: float) -> VectorField2:
    return VectorField2.from_arrays(v.grid, c * v.x.values, c * v.y.values)


def concatenate_isotopies(
    first: SymplecticIsotopy,
    second: SymplecticIsotopy,
    junction_tol: float = 1e-8,
) -> SymplecticIsotopy:
    """Glue two isotopies: follow first on [0, 1/2], then second after it.

    The result reaches second's endpoint composed with first's endpoint.
    Both pieces must share the grid and step count (so the glued path keeps a
    uniform s-spacing), and their velocities must agree at the junction up to
    junction_tol; ease both pieces (translation_isotopy(smooth_ends=True),
    eased_expression) when the raw endpoint speeds differ.
    """
    if first.grid != second.grid:
        raise ValueError("isotopies live on different grids")
    if first.m != second.m:
        raise ValueError("pieces must share the same step count")
    gap = max(
        np.abs(first.velocities[-1].x.values - second.velocities[0].x.values).max(),
        np.abs(first.velocities[-1].y.values - second.velocities[0].y.values).max(),
    )
    if gap > junction_tol:
        raise IsotopyError(
            f"junction velocity mismatch {gap:.3e} exceeds {junction_tol:.3e};"
            " ease both pieces to zero speed at the junction"
        )
    anchor = first.maps[-1]
    maps = first.maps + tuple(compose(g, anchor) for g in second.maps[1:])
    velocities = tuple(_scaled(v, 2.0) for v in first.velocities) + tuple(
        _scaled(v, 2.0) for v in second.velocities[1:]
    )
    m = first.m + second.m
    return SymplecticIsotopy(
        grid=first.grid,
        s_nodes=np.linspace(0.0, 1.0, m + 1),
        maps=maps,
        velocities=velocities,
    )
