"""Observables of the flow: flux, mean curvature form, angle, windings.

Conventions fixed here once:

* The ambient two-form on T^2 x T^2 is omega' = omega (+) -omega, i.e.
  dx1^dy1 - dx2^dy2 in factor coordinates.
* The mean curvature one-form is sigma_i = omega'(e_i, H) with e_i the
  ambient tangents of the graph.  This orientation makes sigma equal to
  d(theta) for Lagrangian graphs and makes the accumulated flux satisfy the
  evolution identity d/dt F_t = sigma_t + dK_t; flipping the arguments
  flips every sign downstream.
* The complex identification is w1 = x1 + i y1, w2 = x2 - i y2 (second
  factor conjugated so omega' is the Kaehler form); theta is the argument
  of the complex determinant of the tangent frame in these coordinates.
  Absolute theta values are convention-bound, so only spreads, differences
  and windings are meaningful.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .grids import (
    TWO_PI,
    GridSpec,
    OneForm,
    ScalarField,
    VectorField2,
    deriv_arrays,
    exterior_derivative,
    form_periods,
    sample_periodic,
)
from .hamiltonian import SymplecticIsotopy
from .mcf import FlowConfig, FlowHistory, LagrangianGraph, run_flow
from .torus_maps import TorusMap, invert, jacobian

__all__ = [
    "AngleField",
    "FluxRecord",
    "MaslovWinding",
    "NotLagrangianError",
    "TwoParamFamily",
    "WindingError",
    "accumulate_flux",
    "angle_consistency",
    "angle_statistics",
    "area",
    "base_velocity_field",
    "evolve_two_param_family",
    "flux_evolution_residual",
    "flux_form",
    "flux_period_identity",
    "flux_periods",
    "k_potential",
    "lagrangian_angle",
    "maslov_windings",
    "mean_curvature_form",
    "sigma_arrays",
    "time_slice_isotopy",
]


class NotLagrangianError(RuntimeError):
    """The surface fails the Lagrangian tolerance or is not immersed."""


class WindingError(RuntimeError):
    """Angle increments around a cycle do not sum to a near-integer winding."""


@dataclass(frozen=True)
class FluxRecord:
    t: float
    periods: tuple[float, float]


@dataclass(frozen=True)
class AngleField:
    """Continuous unwrapped Lagrangian angle.

    branch_consistent is False when parallel loops disagree about the branch
    (their raw windings differ); nonzero but consistent windings are fine and
    live in MaslovWinding, not here.
    """

    theta: ScalarField
    branch_consistent: bool

    @property
    def spread(self) -> float:
        return float(self.theta.values.max() - self.theta.values.min())


@dataclass(frozen=True)
class MaslovWinding:
    """Integer windings of theta around the two cycles.

    normalized carries the same data scaled as the ambient-dimension-over-pi
    class representative, (2/pi) * loop integral of d(theta) = 4 * raw
    winding, kept as floats for cross-reference.
    """

    w_x: int
    w_y: int
    normalized: tuple[float, float]


# ---------------------------------------------------------------------------
# mean curvature form and angle


def sigma_arrays(state) -> tuple[np.ndarray, np.ndarray]:
    """Components of the mean curvature one-form sigma_i = omega'(e_i, H)."""
    ex = state.tangent_x
    ey = state.tangent_y
    H = state.mean_curvature
    s1 = (ex[0] * H[1] - ex[1] * H[0]) - (ex[2] * H[3] - ex[3] * H[2])
    s2 = (ey[0] * H[1] - ey[1] * H[0]) - (ey[2] * H[3] - ey[3] * H[2])
    return s1, s2


def mean_curvature_form(state) -> OneForm:
    """The one-form sigma = (i_H omega') restricted to the graph.

    For a symplectic graph this equals the pullback of i_{H^} omega by the
    base map (H^ the Eulerian base velocity) and also d(theta); its periods
    represent the flow's cohomological drift.
    """
    s1, s2 = sigma_arrays(state)
    return OneForm.from_arrays(state.grid, s1, s2)


def accumulate_flux(flux: OneForm, state, dt: float, previous=None) -> OneForm:
    """Advance the running flux integral by one time step.

    Left endpoint rule by default; pass the pre-step state as `previous` to
    use the trapezoid (midpoint-in-time) variant.
    """
    s1, s2 = sigma_arrays(state)
    if previous is not None:
        p1, p2 = sigma_arrays(previous)
        s1 = 0.5 * (s1 + p1)
        s2 = 0.5 * (s2 + p2)
    return OneForm.from_arrays(
        flux.grid, flux.a.values + dt * s1, flux.b.values + dt * s2
    )


def _loop_windings(theta: np.ndarray, axis: int) -> np.ndarray:
    """Raw winding (in turns) of each parallel loop along the given axis."""
    d = np.roll(theta, -1, axis=axis) - theta
    d -= TWO_PI * np.round(d / TWO_PI)
    return d.sum(axis=axis) / TWO_PI


def lagrangian_angle(state, tol: float = 1e-6) -> AngleField:
    """Unwrapped angle of the complex tangent determinant.

    Requires the surface to be Lagrangian within tol: max |omega'(e1, e2)|,
    which for a graph is max |1 - det Df|.
    """
    ex = state.tangent_x
    ey = state.tangent_y
    pairing = (ex[0] * ey[1] - ex[1] * ey[0]) - (ex[2] * ey[3] - ex[3] * ey[2])
    worst = float(np.abs(pairing).max())
    if worst > tol:
        raise NotLagrangianError(
            f"surface is not Lagrangian within {tol:.1e}:"
            f" max |omega'(e1, e2)| = {worst:.3e}"
        )
    det = (ex[0] + 1j * ex[1]) * (ey[2] - 1j * ey[3]) - (ey[0] + 1j * ey[1]) * (
        ex[2] - 1j * ex[3]
    )
    if np.abs(det).min() < 1e-12:
        raise NotLagrangianError("complex tangent determinant vanishes: immersion failure")
    theta = np.angle(det)
    unwrapped = np.unwrap(theta, axis=1)
    col = np.unwrap(unwrapped[:, 0])
    unwrapped = unwrapped + (col - unwrapped[:, 0])[:, None]
    wx = _loop_windings(theta, 0)
    wy = _loop_windings(theta, 1)
    consistent = bool(
        wx.max() - wx.min() < 0.01 and wy.max() - wy.min() < 0.01
    )
    return AngleField(theta=ScalarField(state.grid, unwrapped), branch_consistent=consistent)


def maslov_windings(angle: AngleField) -> MaslovWinding:
    """Integer windings of the angle around both cycles.

    Raises WindingError when any loop's raw winding strays from the common
    integer by 0.01 or more (a branch-matching failure).
    """
    theta = angle.theta.values
    rounded = []
    raw_means = []
    for axis in (0, 1):
        loops = _loop_windings(theta, axis)
        raw = float(loops.mean())
        target = round(raw)
        dev = float(np.abs(loops - target).max())
        if dev >= 0.01:
            raise WindingError(
                f"windings along axis {axis} deviate from {target} by {dev:.3f}"
            )
        rounded.append(int(target))
        raw_means.append(raw)
    return MaslovWinding(
        w_x=rounded[0],
        w_y=rounded[1],
        normalized=(4.0 * raw_means[0], 4.0 * raw_means[1]),
    )


def angle_statistics(state, tol: float = 1e-6) -> tuple[float, int, int]:
    """(angle spread, winding_x, winding_y) in one call, for per-step records."""
    angle = lagrangian_angle(state, tol=tol)
    w = maslov_windings(angle)
    return angle.spread, w.w_x, w.w_y


def angle_consistency(state, tol: float = 1e-6) -> float:
    """Sup-norm gap between the mean curvature form and d(theta).

    Nonzero windings make theta multivalued; the winding ramps are split off
    and differentiated analytically so the result stays meaningful.
    """
    sigma = mean_curvature_form(state)
    angle = lagrangian_angle(state, tol=tol)
    w = maslov_windings(angle)
    grid = state.grid
    theta = angle.theta.values
    if w.w_x != 0 or w.w_y != 0:
        mx, my = grid.mesh()
        theta = theta - w.w_x * mx - w.w_y * my
    da = deriv_arrays(theta, 0, grid.h, grid.scheme) + w.w_x
    db = deriv_arrays(theta, 1, grid.h, grid.scheme) + w.w_y
    return float(
        max(
            np.abs(sigma.a.values - da).max(),
            np.abs(sigma.b.values - db).max(),
        )
    )


def area(state) -> float:
    """Surface area, the integral of sqrt(det g)."""
    return state.area


def base_velocity_field(state: LagrangianGraph) -> VectorField2:
    """Eulerian velocity of the base map under the flow: H^ = W o f^{-1}.

    W is the label-space velocity of the graphed map, the normal motion of
    the second factor corrected by the first-factor reparametrization:
    W = (H3 - a H1 - b H2, H4 - c H1 - d H2).
    """
    H = state.mean_curvature
    w1 = H[2] - state.a * H[0] - state.b * H[1]
    w2 = H[3] - state.c * H[0] - state.d * H[1]
    grid = state.grid
    finv = invert(state.f)
    mx, my = grid.mesh()
    qx = mx + finv.u.x.values
    qy = my + finv.u.y.values
    vx = sample_periodic(ScalarField(grid, w1), qx, qy)
    vy = sample_periodic(ScalarField(grid, w2), qx, qy)
    return VectorField2.from_arrays(grid, vx, vy)


# ---------------------------------------------------------------------------
# flux of isotopies


def flux_form(iso: SymplecticIsotopy) -> OneForm:
    """Simpson quadrature over s of the pulled-back contraction forms.

    The integrand at node k is f_k^*(i_{X_k} omega): the one-form with
    components (-X^2, X^1) sampled at f_k(p) and acted on by Df_k^T.
    """
    m = iso.m
    if m < 2 or m % 2 != 0:
        raise ValueError(f"Simpson quadrature needs an even step count >= 2, got {m}")
    grid = iso.grid
    n = grid.n
    mx, my = grid.mesh()
    integ1 = np.empty((m + 1, n, n))
    integ2 = np.empty((m + 1, n, n))
    for k, (f, vel) in enumerate(zip(iso.maps, iso.velocities)):
        J = jacobian(f)
        qx = mx + f.u.x.values
        qy = my + f.u.y.values
        a1 = sample_periodic(ScalarField(grid, -vel.y.values), qx, qy)
        a2 = sample_periodic(vel.x, qx, qy)
        integ1[k] = J.xx * a1 + J.yx * a2
        integ2[k] = J.xy * a1 + J.yy * a2
    ds = float(iso.s_nodes[1] - iso.s_nodes[0])
    f1 = simpson(integ1, dx=ds, axis=0)
    f2 = simpson(integ2, dx=ds, axis=0)
    return OneForm.from_arrays(grid, f1, f2)


def flux_periods(iso: SymplecticIsotopy, t: float = 0.0) -> FluxRecord:
    """Cycle periods of the isotopy's flux form."""
    return FluxRecord(t=t, periods=form_periods(flux_form(iso)))


# ---------------------------------------------------------------------------
# two-parameter family and the flux evolution identity


@dataclass(frozen=True)
class TwoParamFamily:
    """Independent flows started from the sampled maps of one isotopy.

    flows[k] evolves the isotopy's map at s_nodes[k]; all flows share one
    fixed time step, so a step index addresses the same time in every flow.
    """

    grid: GridSpec
    s_nodes: np.ndarray
    flows: tuple[FlowHistory, ...]
    dt: float

    def snapshot_state(self, flow_index: int, step: int) -> LagrangianGraph:
        for snap in self.flows[flow_index].snapshots:
            if snap.step == step:
                return snap.state
        raise KeyError(
            f"flow {flow_index} holds no snapshot at step {step};"
            " request it via FlowConfig.snapshot_steps"
        )

    def endpoint_state(self, step: int) -> LagrangianGraph:
        return self.snapshot_state(len(self.flows) - 1, step)


def _worker_count(jobs: int) -> int:
    env = os.environ.get("LAGFLOW_THREADS")
    if env:
        return max(1, min(jobs, int(env)))
    return max(1, min(jobs, os.cpu_count() or 1, 8))


def evolve_two_param_family(
    iso: SymplecticIsotopy,
    config: FlowConfig,
    s_stride: int = 1,
) -> TwoParamFamily:
    """Evolve every s_stride-th map of the isotopy by the flow.

    The config must pin dt_fixed and disable the convergence stop so all
    flows march on one shared time grid.  Flows run concurrently; the thread
    count honors the LAGFLOW_THREADS environment variable.
    """
    if config.dt_fixed is None:
        raise ValueError("two-parameter families need dt_fixed: one shared time grid")
    if config.conv_threshold != 0.0:
        raise ValueError("set conv_threshold = 0 so no family flow stops early")
    if iso.m % s_stride != 0:
        raise ValueError(f"stride {s_stride} does not divide the isotopy steps {iso.m}")
    starts = iso.maps[::s_stride]
    with ThreadPoolExecutor(max_workers=_worker_count(len(starts))) as pool:
        flows = list(pool.map(lambda f0: run_flow(f0, config), starts))
    for k, flow in enumerate(flows):
        if flow.termination == "aborted":
            raise RuntimeError(f"family flow {k} aborted: {flow.failure}")
    lengths = {len(flow.records) for flow in flows}
    if len(lengths) != 1:
        raise RuntimeError(f"family flows fell out of step: record counts {sorted(lengths)}")
    return TwoParamFamily(
        grid=iso.grid,
        s_nodes=iso.s_nodes[::s_stride].copy(),
        flows=tuple(flows),
        dt=config.dt_fixed,
    )


def _slice_stencil(count: int, k: int) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Second-order d/ds stencil over `count` nodes, weights per (2 ds)."""
    if count < 3:
        return (0, 1), (-2.0, 2.0)
    if k == 0:
        return (0, 1, 2), (-3.0, 4.0, -1.0)
    if k == count - 1:
        return (count - 3, count - 2, count - 1), (1.0, -4.0, 3.0)
    return (k - 1, k + 1), (-1.0, 1.0)


def _slice_derivatives(disp: np.ndarray, ds: float) -> np.ndarray:
    """d/ds of the displacement stack (count, 2, n, n) at every node."""
    count = disp.shape[0]
    out = np.empty_like(disp)
    for k in range(count):
        idx, weights = _slice_stencil(count, k)
        acc = np.zeros_like(disp[0])
        for i, w in zip(idx, weights):
            acc += w * disp[i]
        out[k] = acc / (2.0 * ds)
    return out


def time_slice_isotopy(fam: TwoParamFamily, step: int, s_stride: int = 1) -> SymplecticIsotopy:
    """The s-path of maps at one time step, with velocities rebuilt from it.

    Velocities are centered (one-sided at the ends) s-differences of the
    displacements composed back through each map's inverse.
    """
    if (len(fam.s_nodes) - 1) % s_stride != 0:
        raise ValueError(f"stride {s_stride} does not divide the family's s-grid")
    indices = range(0, len(fam.s_nodes), s_stride)
    states = [fam.snapshot_state(j, step) for j in indices]
    maps = [st.f for st in states]
    s_nodes = fam.s_nodes[::s_stride].copy()
    ds = float(s_nodes[1] - s_nodes[0])
    disp = np.stack([(f.u.x.values, f.u.y.values) for f in maps])
    dvel = _slice_derivatives(disp, ds)
    grid = fam.grid
    mx, my = grid.mesh()
    velocities = []
    for k, f in enumerate(maps):
        finv = invert(f)
        qx = mx + finv.u.x.values
        qy = my + finv.u.y.values
        vx = sample_periodic(ScalarField(grid, dvel[k, 0]), qx, qy)
        vy = sample_periodic(ScalarField(grid, dvel[k, 1]), qx, qy)
        velocities.append(VectorField2.from_arrays(grid, vx, vy))
    return SymplecticIsotopy(
        grid=grid, s_nodes=s_nodes, maps=tuple(maps), velocities=tuple(velocities)
    )


def k_potential(fam: TwoParamFamily, step: int, s_stride: int = 1) -> ScalarField:
    """The potential K = integral over s of omega(X, H^) composed with f.

    Because omega has constant coefficients the composed integrand satisfies
    omega(X, H^) o f = omega(X o f, H^ o f) = omega(d_s f, W), which uses the
    label-space velocities directly and needs no inversion or resampling.
    """
    if (len(fam.s_nodes) - 1) % s_stride != 0:
        raise ValueError(f"stride {s_stride} does not divide the family's s-grid")
    indices = list(range(0, len(fam.s_nodes), s_stride))
    count = len(indices)
    if count < 3 or (count - 1) % 2 != 0:
        raise ValueError(f"Simpson quadrature needs an even interval count, got {count - 1}")
    states = [fam.snapshot_state(j, step) for j in indices]
    disp = np.stack([(st.f.u.x.values, st.f.u.y.values) for st in states])
    ds = float(fam.s_nodes[s_stride] - fam.s_nodes[0])
    dvel = _slice_derivatives(disp, ds)
    n = fam.grid.n
    integrand = np.empty((count, n, n))
    for k, st in enumerate(states):
        H = st.mean_curvature
        w1 = H[2] - st.a * H[0] - st.b * H[1]
        w2 = H[3] - st.c * H[0] - st.d * H[1]
        integrand[k] = dvel[k, 0] * w2 - dvel[k, 1] * w1
    values = simpson(integrand, dx=ds, axis=0)
    return ScalarField(fam.grid, values)


def flux_evolution_residual(
    fam: TwoParamFamily,
    step: int,
    offset: int,
    s_stride: int = 1,
) -> float:
    """Sup-norm residual of d/dt F_t = sigma_t + dK_t at one interior step.

    The time derivative is a centered difference of the slice flux forms at
    step +- offset; sigma is the mean curvature form of the s = 1 endpoint.
    """
    plus = flux_form(time_slice_isotopy(fam, step + offset, s_stride))
    minus = flux_form(time_slice_isotopy(fam, step - offset, s_stride))
    span = 2.0 * offset * fam.dt
    state = fam.endpoint_state(step)
    s1, s2 = sigma_arrays(state)
    dk = exterior_derivative(k_potential(fam, step, s_stride))
    r1 = (plus.a.values - minus.a.values) / span - s1 - dk.a.values
    r2 = (plus.b.values - minus.b.values) / span - s2 - dk.b.values
    return float(max(np.abs(r1).max(), np.abs(r2).max()))


def flux_period_identity(
    fam: TwoParamFamily,
    step: int,
    offset: int,
    s_stride: int = 1,
) -> tuple[float, float]:
    """Gaps |d/dt P(F_t) - P(sigma_t)| on both cycles (dK has no periods)."""
    pp = form_periods(flux_form(time_slice_isotopy(fam, step + offset, s_stride)))
    pm = form_periods(flux_form(time_slice_isotopy(fam, step - offset, s_stride)))
    span = 2.0 * offset * fam.dt
    ps = form_periods(mean_curvature_form(fam.endpoint_state(step)))
    return (
        abs((pp[0] - pm[0]) / span - ps[0]),
        abs((pp[1] - pm[1]) / span - ps[1]),
    )
