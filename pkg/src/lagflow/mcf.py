"""Mean curvature flow of Lagrangian graphs in the flat product T^2 x T^2.

The surface is the graph S = {(p, f(p))} of a torus map f, embedded through
F(p) = (p, f(p)) with all four ambient components tracked in covering
coordinates.  Because the ambient is flat, the mean curvature vector is the
metric Laplacian of the embedding, computed in divergence form

    H^A = (1/sqrt(det g)) d_i( sqrt(det g) g^{ij} d_j F^A ),

which for the grid derivative schemes used here is exactly the discrete
area gradient (summation by parts is exact for spectral and centered
differences).  Time stepping moves the whole embedding by dt * H and then
restores graph form by composing the second-factor map with the inverse of
the first-factor map; that composition is precisely the tangential
reparametrization freedom of the flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .grids import (
    SCHEME_SPECTRAL,
    GridSpec,
    OneForm,
    ScalarField,
    deriv_arrays,
    form_periods,
)
from .torus_maps import (
    InversionError,
    MatrixField2,
    TorusMap,
    compose,
    invert,
)

__all__ = [
    "DegenerateMetricError",
    "FlowConfig",
    "FlowHistory",
    "LagrangianGraph",
    "Snapshot",
    "StepRecord",
    "dt_cfl",
    "induced_geometry",
    "mcf_step",
    "run_flow",
    "stability_factor",
]

INTEGRATORS = ("euler", "heun")
FLUX_RULES = ("left", "trapezoid")


class DegenerateMetricError(RuntimeError):
    """The induced metric lost positivity; the surface is no immersion."""


@dataclass(frozen=True)
class _Geometry:
    """Pointwise geometry of an embedded surface, all arrays (n, n) or (4, n, n)."""

    dfx: np.ndarray
    dfy: np.ndarray
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    det: np.ndarray
    sqrtg: np.ndarray
    i11: np.ndarray
    i12: np.ndarray
    i22: np.ndarray
    H: np.ndarray


def _embedding_geometry(v: np.ndarray, grid: GridSpec) -> _Geometry:
    """Geometry of F(p) = (p + (v1, v2), p + (v3, v4)) from its displacement.

    The +p parts are differentiated analytically, so every array that touches
    the derivative schemes stays periodic.
    """
    h = grid.h
    dvx = deriv_arrays(v, 0, h, grid.scheme)
    dvy = deriv_arrays(v, 1, h, grid.scheme)
    dfx = dvx.copy()
    dfx[0] += 1.0
    dfx[2] += 1.0
    dfy = dvy.copy()
    dfy[1] += 1.0
    dfy[3] += 1.0
    g11 = np.einsum("aij,aij->ij", dfx, dfx)
    g12 = np.einsum("aij,aij->ij", dfx, dfy)
    g22 = np.einsum("aij,aij->ij", dfy, dfy)
    det = g11 * g22 - g12 * g12
    # det is a Gram determinant, so exact arithmetic keeps it >= 0; treat
    # numerically-vanishing values as rank loss of the tangent frame.
    if det.min() <= 1e-20:
        worst = np.unravel_index(np.argmin(det), det.shape)
        raise DegenerateMetricError(
            f"induced metric degenerate at node {tuple(int(i) for i in worst)}:"
            f" det g = {det.min():.3e}"
        )
    sqrtg = np.sqrt(det)
    i11 = g22 / det
    i12 = -g12 / det
    i22 = g11 / det
    px = sqrtg * (i11 * dfx + i12 * dfy)
    py = sqrtg * (i12 * dfx + i22 * dfy)
    H = (deriv_arrays(px, 0, h, grid.scheme) + deriv_arrays(py, 1, h, grid.scheme)) / sqrtg
    return _Geometry(dfx, dfy, g11, g12, g22, det, sqrtg, i11, i12, i22, H)


class _SurfaceView:
    """Shared read-only views over a computed geometry.

    Subclasses provide self.grid and self._geo.
    """

    grid: GridSpec
    _geo: _Geometry

    @property
    def tangent_x(self) -> np.ndarray:
        """Ambient tangent d(F)/dx, components stacked (4, n, n)."""
        return self._geo.dfx

    @property
    def tangent_y(self) -> np.ndarray:
        return self._geo.dfy

    @property
    def mean_curvature(self) -> np.ndarray:
        """Ambient mean curvature vector, components stacked (4, n, n)."""
        return self._geo.H

    @property
    def metric(self) -> MatrixField2:
        g = self._geo
        return MatrixField2(self.grid, g.g11, g.g12, g.g12.copy(), g.g22)

    @property
    def inv_metric(self) -> MatrixField2:
        g = self._geo
        return MatrixField2(self.grid, g.i11, g.i12, g.i12.copy(), g.i22)

    @property
    def sqrt_det_g(self) -> ScalarField:
        return ScalarField(self.grid, self._geo.sqrtg)

    @property
    def area(self) -> float:
        return float(self.grid.h ** 2 * self._geo.sqrtg.sum())

    @property
    def max_mean_curvature(self) -> float:
        return float(np.sqrt(np.einsum("aij,aij->ij", self._geo.H, self._geo.H)).max())

    @property
    def defect(self) -> float:
        """Symplectomorphism defect of the represented map, max |det Df - 1|.

        Computed as the ratio of the factor Jacobians, so it is available
        even between re-graphs when the surface is not in graph form.
        """
        g = self._geo
        det1 = g.dfx[0] * g.dfy[1] - g.dfy[0] * g.dfx[1]
        det2 = g.dfx[2] * g.dfy[3] - g.dfy[2] * g.dfx[3]
        return float(np.abs(det2 / det1 - 1.0).max())

    def tangential_components(self) -> tuple[np.ndarray, np.ndarray]:
        """Inner products <H, e_i> with both ambient tangents."""
        g = self._geo
        t1 = np.einsum("aij,aij->ij", g.H, g.dfx)
        t2 = np.einsum("aij,aij->ij", g.H, g.dfy)
        return t1, t2

    def max_tangential_alignment(self, threshold: float = 0.0) -> float:
        """Largest |<H, e_i>| / (|H| |e_i|) where |H| exceeds the threshold."""
        g = self._geo
        norm_h = np.sqrt(np.einsum("aij,aij->ij", g.H, g.H))
        t1, t2 = self.tangential_components()
        mask = norm_h > threshold
        if not mask.any():
            return 0.0
        denom = np.where(mask, norm_h, 1.0)
        a1 = np.abs(t1) / (denom * np.sqrt(g.g11))
        a2 = np.abs(t2) / (denom * np.sqrt(g.g22))
        return float(max(a1[mask].max(), a2[mask].max()))


@dataclass(frozen=True)
class LagrangianGraph(_SurfaceView):
    """Geometry of the graph of a torus map, computed lazily and cached."""

    f: TorusMap

    @property
    def grid(self) -> GridSpec:
        return self.f.grid

    @cached_property
    def _geo(self) -> _Geometry:
        u = self.f.u
        zero = np.zeros_like(u.x.values)
        v = np.stack((zero, zero, u.x.values, u.y.values))
        return _embedding_geometry(v, self.grid)

    # Jacobian entries Df = [[a, b], [c, d]] of the graphed map.
    @property
    def a(self) -> np.ndarray:
        return self._geo.dfx[2]

    @property
    def b(self) -> np.ndarray:
        return self._geo.dfy[2]

    @property
    def c(self) -> np.ndarray:
        return self._geo.dfx[3]

    @property
    def d(self) -> np.ndarray:
        return self._geo.dfy[3]


class _EmbeddedSurface(_SurfaceView):
    """Surface between re-graphs, held as a four-component displacement."""

    def __init__(self, grid: GridSpec, v: np.ndarray):
        self.grid = grid
        self.v = v

    @cached_property
    def _geo(self) -> _Geometry:
        return _embedding_geometry(self.v, self.grid)


def induced_geometry(f: TorusMap) -> LagrangianGraph:
    """Graph geometry of f, evaluated eagerly so errors surface here."""
    state = LagrangianGraph(f)
    state._geo
    return state


def _max_inverse_eigenvalue(geo: _Geometry) -> float:
    half_tr = 0.5 * (geo.i11 + geo.i22)
    disc = np.sqrt((0.5 * (geo.i11 - geo.i22)) ** 2 + geo.i12 ** 2)
    return float((half_tr + disc).max())


def dt_cfl(state: _SurfaceView, safety: float = 1.0) -> float:
    """Parabolic stability bound safety * h^2 / (4 max eig g^{-1}).

    This is the classical five-point-Laplacian heuristic.  For the spectral
    scheme the true explicit-Euler limit is smaller by (2/pi)^2 because the
    derivative symbol reaches pi(1 - 2/n)/h; the flow driver applies that
    correction via the scheme stability factor, so prefer run_flow (or
    multiply by stability_factor yourself) when stepping near this bound.
    """
    if not 0.0 < safety <= 1.0:
        raise ValueError(f"safety factor must lie in (0, 1], got {safety}")
    return safety * state.grid.h ** 2 / (4.0 * _max_inverse_eigenvalue(state._geo))


def stability_factor(grid: GridSpec) -> float:
    """Fraction of the parabolic heuristic that explicit stepping tolerates.

    The composite operator's largest eigenvalue is 2 max_eig(g^{-1}) s_max^2
    with s_max the peak first-derivative symbol: pi(1 - 2/n)/h spectrally
    (Nyquist zeroed), about 1.372/h for the centered scheme.  The Euler
    limit 2/lambda_max divided by the heuristic gives 4/(h s_max)^2, which
    is below one only for the spectral scheme.
    """
    if grid.scheme == SCHEME_SPECTRAL:
        kh = np.pi * (1.0 - 2.0 / grid.n)
        return min(1.0, 4.0 / kh**2)
    return 1.0


def _advance(v: np.ndarray, geo: _Geometry, grid: GridSpec, dt: float, integrator: str) -> np.ndarray:
    if integrator == "euler":
        return v + dt * geo.H
    if integrator == "heun":
        predictor = v + dt * geo.H
        geo1 = _embedding_geometry(predictor, grid)
        return v + 0.5 * dt * (geo.H + geo1.H)
    raise ValueError(f"unknown integrator {integrator!r}; expected one of {INTEGRATORS}")


def _regraph(v: np.ndarray, grid: GridSpec) -> TorusMap:
    """Restore graph form: compose the second factor with the first's inverse."""
    first = TorusMap.from_displacement(grid, v[0], v[1])
    second = TorusMap.from_displacement(grid, v[2], v[3])
    return compose(second, invert(first))


def mcf_step(state: LagrangianGraph, dt: float, integrator: str = "euler") -> LagrangianGraph:
    """One explicit flow step of the embedding followed by re-graphing.

    Raises ValueError when dt exceeds the stability bound and InversionError
    when the stepped surface has left graph form.
    """
    bound = dt_cfl(state, 1.0)
    if dt > bound * (1.0 + 1e-12):
        raise ValueError(f"dt {dt:.6e} violates the stability bound {bound:.6e}")
    u = state.f.u
    zero = np.zeros_like(u.x.values)
    v = np.stack((zero, zero, u.x.values, u.y.values))
    stepped = _advance(v, state._geo, state.grid, dt, integrator)
    return induced_geometry(_regraph(stepped, state.grid))


@dataclass(frozen=True)
class FlowConfig:
    """Knobs of the flow driver; everything has a safe default but the grid."""

    grid: GridSpec
    dt_safety: float = 0.5
    dt_fixed: Optional[float] = None
    t_max: float = 50.0
    conv_threshold: float = 1e-6
    regraph_interval: int = 1
    defect_abort: float = 1e-2
    integrator: str = "euler"
    flux_rule: str = "left"
    snapshot_interval: int = 0
    snapshot_steps: tuple[int, ...] = ()
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not 0.0 < self.dt_safety <= 1.0:
            raise ValueError(f"dt_safety must lie in (0, 1], got {self.dt_safety}")
        if self.dt_fixed is not None and self.dt_fixed <= 0.0:
            raise ValueError("dt_fixed must be positive")
        if self.t_max <= 0.0:
            raise ValueError("t_max must be positive")
        if self.conv_threshold < 0.0:
            raise ValueError("conv_threshold must be nonnegative")
        if self.regraph_interval < 1:
            raise ValueError("regraph_interval must be >= 1")
        if self.defect_abort <= 0.0:
            raise ValueError("defect_abort must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}; expected one of {INTEGRATORS}")
        if self.flux_rule not in FLUX_RULES:
            raise ValueError(f"unknown flux rule {self.flux_rule!r}; expected one of {FLUX_RULES}")
        if self.snapshot_interval < 0 or self.max_steps < 1:
            raise ValueError("snapshot_interval must be >= 0 and max_steps >= 1")


@dataclass(frozen=True)
class StepRecord:
    """Per-step observables; flux periods are of the running accumulated form."""

    step: int
    t: float
    area: float
    max_h: float
    defect: float
    flux_x: float
    flux_y: float
    angle_spread: float
    winding_x: int
    winding_y: int


@dataclass(frozen=True)
class Snapshot:
    step: int
    t: float
    state: LagrangianGraph


@dataclass
class FlowHistory:
    """Everything a finished (or aborted) run produced."""

    config: FlowConfig
    records: list[StepRecord] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)
    accumulated_flux: Optional[OneForm] = None
    final_map: Optional[TorusMap] = None
    termination: str = "aborted"
    failure: Optional[str] = None

    @property
    def final_state(self) -> LagrangianGraph:
        if self.final_map is None:
            raise RuntimeError("flow produced no final state")
        return induced_geometry(self.final_map)

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)


Observer = Callable[[StepRecord, Optional[LagrangianGraph]], None]


def run_flow(
    f0: TorusMap,
    config: FlowConfig,
    observers: Sequence[Observer] = (),
) -> FlowHistory:
    """Flow the graph of f0 until convergence, the horizon, or failure.

    Per-step records carry area, sup|H|, symplectic defect, the running flux
    periods, and angle statistics.  Failures (stability violation, loss of
    graph form, degenerate metric, defect beyond the abort threshold) end the
    run with termination "aborted" and the partial history preserved.
    """
    from . import diagnostics  # runtime import; diagnostics imports this module

    grid = config.grid
    if f0.grid != grid:
        raise ValueError("initial map lives on a different grid than the config")
    history = FlowHistory(config=config)
    flux = OneForm.zero(grid)
    state: _SurfaceView = induced_geometry(f0)
    graph: Optional[LagrangianGraph] = state if isinstance(state, LagrangianGraph) else None
    t = 0.0
    step = 0
    prev_sigma: Optional[tuple[np.ndarray, np.ndarray]] = None
    pending_dt = 0.0
    last_wx = 0
    last_wy = 0
    snapshot_wanted = set(config.snapshot_steps)

    def take_snapshot(current: _SurfaceView) -> LagrangianGraph:
        if isinstance(current, LagrangianGraph):
            return current
        return induced_geometry(_regraph(current.v, grid))

    while True:
        sigma = diagnostics.sigma_arrays(state)
        if config.flux_rule == "trapezoid" and prev_sigma is not None:
            flux = OneForm.from_arrays(
                grid,
                flux.a.values + 0.5 * pending_dt * (prev_sigma[0] + sigma[0]),
                flux.b.values + 0.5 * pending_dt * (prev_sigma[1] + sigma[1]),
            )
        defect = state.defect
        # Past the abort threshold the angle is not meaningful; skip it so the
        # defect branch below aborts gracefully instead of raising from here.
        angle_failure: Optional[str] = None
        if defect > config.defect_abort:
            spread, wx, wy = float("nan"), last_wx, last_wy
        else:
            try:
                spread, wx, wy = diagnostics.angle_statistics(state, tol=2.0 * config.defect_abort)
                last_wx, last_wy = wx, wy
            except (diagnostics.NotLagrangianError, diagnostics.WindingError) as exc:
                spread, wx, wy = float("nan"), last_wx, last_wy
                angle_failure = str(exc)
        px, py = form_periods(flux)
        record = StepRecord(
            step=step,
            t=t,
            area=state.area,
            max_h=state.max_mean_curvature,
            defect=defect,
            flux_x=px,
            flux_y=py,
            angle_spread=spread,
            winding_x=wx,
            winding_y=wy,
        )
        history.records.append(record)
        if step == 0 or step in snapshot_wanted or (
            config.snapshot_interval > 0 and step % config.snapshot_interval == 0
        ):
            history.snapshots.append(Snapshot(step, t, take_snapshot(state)))
        for observer in observers:
            observer(record, graph)

        if record.defect > config.defect_abort:
            history.termination = "aborted"
            history.failure = (
                f"symplectic defect {record.defect:.3e} exceeded the abort"
                f" threshold {config.defect_abort:.3e} at step {step}"
            )
            break
        if angle_failure is not None:
            history.termination = "aborted"
            history.failure = f"angle diagnostics failed at step {step}: {angle_failure}"
            break
        if record.max_h < config.conv_threshold:
            history.termination = "converged"
            break
        if t >= config.t_max:
            history.termination = "horizon"
            break
        if step >= config.max_steps:
            history.termination = "aborted"
            history.failure = f"step budget {config.max_steps} exhausted before t_max"
            break

        if config.dt_fixed is not None:
            dt = config.dt_fixed
        else:
            dt = dt_cfl(state, config.dt_safety) * stability_factor(grid)
        if t + dt > config.t_max:
            dt = config.t_max - t
        try:
            bound = dt_cfl(state, 1.0)
            if dt > bound * (1.0 + 1e-12):
                raise ValueError(f"dt {dt:.6e} violates the stability bound {bound:.6e}")
            if isinstance(state, LagrangianGraph):
                u = state.f.u
                zero = np.zeros_like(u.x.values)
                v = np.stack((zero, zero, u.x.values, u.y.values))
            else:
                v = state.v
            stepped = _advance(v, state._geo, grid, dt, config.integrator)
            if (step + 1) % config.regraph_interval == 0:
                state = induced_geometry(_regraph(stepped, grid))
                graph = state
            else:
                state = _EmbeddedSurface(grid, stepped)
                graph = None
                state._geo
        except (InversionError, DegenerateMetricError, ValueError) as exc:
            history.termination = "aborted"
            history.failure = f"step {step + 1} failed: {exc}"
            break

        if config.flux_rule == "left":
            flux = OneForm.from_arrays(
                grid,
                flux.a.values + dt * sigma[0],
                flux.b.values + dt * sigma[1],
            )
        else:
            prev_sigma = sigma
            pending_dt = dt
        t += dt
        step += 1

    final = take_snapshot(state)
    history.final_map = final.f
    if not history.snapshots or history.snapshots[-1].step != step:
        history.snapshots.append(Snapshot(step, t, final))
    history.accumulated_flux = flux
    return history
