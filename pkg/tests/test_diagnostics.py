"""Observable layer: flux forms, angle, windings, and the evolution identity."""

import numpy as np
import pytest
from scipy.integrate import simpson

from lagflow.grids import (
    GridSpec,
    OneForm,
    ScalarField,
    TWO_PI,
    exterior_derivative,
    form_periods,
    sample_periodic,
)
from lagflow.hamiltonian import (
    HamiltonianSpec,
    concatenate_isotopies,
    integrate_isotopy,
    translation_isotopy,
)
from lagflow.mcf import FlowConfig, induced_geometry
from lagflow.torus_maps import TorusMap
from lagflow import diagnostics as dg

COSCOS = "0.1*cos(x)*cos(y)"


@pytest.fixture(scope="module")
def grid64():
    return GridSpec(64)


@pytest.fixture(scope="module")
def iso64(grid64):
    spec = HamiltonianSpec.from_expression(COSCOS)
    return integrate_isotopy(spec, grid64, 128)


@pytest.fixture(scope="module")
def perturbed64(iso64):
    return induced_geometry(iso64.maps[-1])


@pytest.fixture(scope="module")
def identity64(grid64):
    return induced_geometry(TorusMap.identity(grid64))


def nonsymplectic_state(n=32):
    grid = GridSpec(n)
    mx, my = grid.mesh()
    f = TorusMap.from_displacement(grid, 0.1 * np.sin(my), 0.1 * np.sin(mx))
    return induced_geometry(f)


class TestMeanCurvatureForm:
    def test_identity_exactly_zero(self, identity64):
        s1, s2 = dg.sigma_arrays(identity64)
        assert np.all(s1 == 0.0) and np.all(s2 == 0.0)
        form = dg.mean_curvature_form(identity64)
        assert form_periods(form) == (0.0, 0.0)

    def test_translation_exactly_zero(self, grid64):
        state = induced_geometry(TorusMap.translation(grid64, 0.3, 2.2))
        s1, s2 = dg.sigma_arrays(state)
        assert np.all(s1 == 0.0) and np.all(s2 == 0.0)

    def test_matches_graph_specialization(self, perturbed64):
        """For det Df = 1 the components reduce to H2 + c H3 - a H4 and
        -H1 + d H3 - b H4; the general tangent-stack formula must agree."""
        s1, s2 = dg.sigma_arrays(perturbed64)
        H = perturbed64.mean_curvature
        g1 = H[1] + perturbed64.c * H[2] - perturbed64.a * H[3]
        g2 = -H[0] + perturbed64.d * H[2] - perturbed64.b * H[3]
        assert np.abs(s1 - g1).max() < 1e-12
        assert np.abs(s2 - g2).max() < 1e-12

    def test_accumulate_left_rule(self, perturbed64, grid64):
        flux = OneForm.zero(grid64)
        out = dg.accumulate_flux(flux, perturbed64, 0.25)
        s1, s2 = dg.sigma_arrays(perturbed64)
        assert np.allclose(out.a.values, 0.25 * s1, atol=1e-15)
        assert np.allclose(out.b.values, 0.25 * s2, atol=1e-15)

    def test_accumulate_trapezoid(self, perturbed64, identity64, grid64):
        flux = OneForm.zero(grid64)
        out = dg.accumulate_flux(flux, identity64, 0.5, previous=perturbed64)
        s1, _ = dg.sigma_arrays(perturbed64)
        assert np.allclose(out.a.values, 0.25 * s1, atol=1e-15)


class TestLagrangianAngle:
    def test_identity_angle(self, identity64):
        ang = dg.lagrangian_angle(identity64)
        assert np.all(ang.theta.values == -np.pi / 2)
        assert ang.spread == 0.0
        assert ang.branch_consistent

    def test_matches_graph_formula(self, perturbed64):
        ang = dg.lagrangian_angle(perturbed64)
        ref = np.angle(
            (perturbed64.b - perturbed64.c) - 1j * (perturbed64.a + perturbed64.d)
        )
        gap = np.abs(np.exp(1j * ang.theta.values) - np.exp(1j * ref)).max()
        assert gap < 1e-12

    def test_not_lagrangian_rejected(self):
        with pytest.raises(dg.NotLagrangianError, match="Lagrangian"):
            dg.lagrangian_angle(nonsymplectic_state())

    def test_loose_tolerance_still_computes(self):
        ang = dg.lagrangian_angle(nonsymplectic_state(), tol=0.02)
        assert ang.branch_consistent

    def test_immersion_failure_detected(self):
        """f = (x - 2 sin x, y) has Df = diag(-1, 1) at x = 0, where the
        complex determinant (b - c) - i(a + d) vanishes exactly."""
        grid = GridSpec(32)
        mx, _ = grid.mesh()
        f = TorusMap.from_displacement(grid, -2.0 * np.sin(mx), np.zeros_like(mx))
        state = induced_geometry(f)
        with pytest.raises(dg.NotLagrangianError, match="immersion"):
            dg.lagrangian_angle(state, tol=3.0)

    def test_windings_zero_for_graph_isotopic_to_identity(self, perturbed64):
        w = dg.maslov_windings(dg.lagrangian_angle(perturbed64))
        assert (w.w_x, w.w_y) == (0, 0)
        assert abs(w.normalized[0]) < 1e-6
        assert abs(w.normalized[1]) < 1e-6

    def test_winding_detection(self, grid64):
        mx, _ = grid64.mesh()
        ang = dg.AngleField(
            theta=ScalarField(grid64, mx + 0.05 * np.sin(mx)), branch_consistent=True
        )
        w = dg.maslov_windings(ang)
        assert (w.w_x, w.w_y) == (1, 0)
        assert w.normalized[0] == pytest.approx(4.0, abs=1e-9)

    def test_disagreeing_loops_raise(self, grid64):
        # x-loops in the upper half wind once, lower-half loops not at all
        mx, my = grid64.mesh()
        theta = mx * (my > np.pi)
        ang = dg.AngleField(theta=ScalarField(grid64, theta), branch_consistent=True)
        with pytest.raises(dg.WindingError, match="deviate"):
            dg.maslov_windings(ang)

    def test_angle_statistics(self, perturbed64):
        spread, wx, wy = dg.angle_statistics(perturbed64)
        assert spread > 0.0
        assert (wx, wy) == (0, 0)


class TestAngleConsistency:
    def test_identity_zero(self, identity64):
        assert dg.angle_consistency(identity64) == 0.0

    def test_perturbed_spectral_small(self, perturbed64):
        assert dg.angle_consistency(perturbed64, tol=1e-4) < 1e-6

    def test_fourth_order_refinement(self, iso64):
        """Same symplectic map evaluated at n=32 and n=64 with the centered
        scheme: the sup gap between sigma and d(theta) drops at least 4x."""
        f1 = iso64.maps[-1]
        gaps = {}
        for n in (32, 64):
            g4 = GridSpec(n, scheme="centered4")
            stride = 64 // n
            f = TorusMap.from_displacement(
                g4,
                f1.u.x.values[::stride, ::stride],
                f1.u.y.values[::stride, ::stride],
            )
            gaps[n] = dg.angle_consistency(induced_geometry(f), tol=1e-4)
        assert gaps[64] < 1e-5
        assert gaps[32] / gaps[64] >= 4.0

    def test_area(self, identity64, perturbed64):
        assert dg.area(identity64) == pytest.approx(8 * np.pi**2, rel=1e-13)
        assert dg.area(perturbed64) > 8 * np.pi**2


class TestBaseVelocity:
    def test_identity_zero(self, identity64):
        bv = dg.base_velocity_field(identity64)
        assert np.all(bv.x.values == 0.0)
        assert np.all(bv.y.values == 0.0)

    def test_eulerian_consistency(self, perturbed64, grid64):
        """Sampling the Eulerian field at f(p) recovers the label velocity."""
        bv = dg.base_velocity_field(perturbed64)
        mx, my = grid64.mesh()
        qx = mx + perturbed64.f.u.x.values
        qy = my + perturbed64.f.u.y.values
        H = perturbed64.mean_curvature
        w1 = H[2] - perturbed64.a * H[0] - perturbed64.b * H[1]
        w2 = H[3] - perturbed64.c * H[0] - perturbed64.d * H[1]
        assert np.abs(sample_periodic(bv.x, qx, qy) - w1).max() < 1e-6
        assert np.abs(sample_periodic(bv.y, qx, qy) - w2).max() < 1e-6


class TestFluxForm:
    def test_identity_isotopy_zero(self, grid64):
        iso = integrate_isotopy(HamiltonianSpec.from_expression("0"), grid64, 4)
        form = dg.flux_form(iso)
        assert np.all(form.a.values == 0.0)
        assert np.all(form.b.values == 0.0)

    def test_translation_form_and_periods(self, grid64):
        a, b = 0.7, -0.3
        iso = translation_isotopy(grid64, a, b)
        form = dg.flux_form(iso)
        assert np.abs(form.a.values + b).max() < 1e-12
        assert np.abs(form.b.values - a).max() < 1e-12
        rec = dg.flux_periods(iso)
        assert rec.t == 0.0
        assert rec.periods[0] == pytest.approx(-TWO_PI * b, abs=1e-10)
        assert rec.periods[1] == pytest.approx(TWO_PI * a, abs=1e-10)

    def test_hamiltonian_periods_vanish(self, iso64):
        px, py = form_periods(dg.flux_form(iso64))
        assert abs(px) < 1e-8
        assert abs(py) < 1e-8

    def test_s_dependent_hamiltonian_periods_vanish(self, grid64):
        spec = HamiltonianSpec.from_expression("0.1*s*sin(x)*cos(y)")
        iso = integrate_isotopy(spec, grid64, 128)
        px, py = form_periods(dg.flux_form(iso))
        assert abs(px) < 1e-8
        assert abs(py) < 1e-8

    def test_equals_differential_of_averaged_hamiltonian(self, iso64, grid64):
        """For autonomous G the flux form is exactly d of the s-average of
        G o f_s, because pullback commutes with d; the potential is sampled
        through the exact expression so the oracle is independent."""
        mx, my = grid64.mesh()
        vals = []
        for f in iso64.maps:
            qx = mx + f.u.x.values
            qy = my + f.u.y.values
            vals.append(0.1 * np.cos(qx) * np.cos(qy))
        pot = simpson(np.stack(vals), dx=1.0 / iso64.m, axis=0)
        dpot = exterior_derivative(ScalarField(grid64, pot))
        form = dg.flux_form(iso64)
        assert np.abs(form.a.values - dpot.a.values).max() < 1e-6
        assert np.abs(form.b.values - dpot.b.values).max() < 1e-6

    def test_additive_under_concatenation(self, grid64):
        A = translation_isotopy(grid64, 0.5, -0.2, m=16, smooth_ends=True)
        B = translation_isotopy(grid64, -0.3, 0.4, m=16, smooth_ends=True)
        C = concatenate_isotopies(A, B)
        pA = np.array(form_periods(dg.flux_form(A)))
        pB = np.array(form_periods(dg.flux_form(B)))
        pC = np.array(form_periods(dg.flux_form(C)))
        assert np.abs(pC - pA - pB).max() < 1e-7

    def test_odd_step_count_rejected(self, grid64):
        iso = integrate_isotopy(HamiltonianSpec.from_expression("0"), grid64, 3)
        with pytest.raises(ValueError, match="even"):
            dg.flux_form(iso)


@pytest.fixture(scope="module")
def grid32():
    return GridSpec(32)


@pytest.fixture(scope="module")
def family_pair(grid32):
    """Coarse family (m2=4, dt) and refined family (m2=8, dt/2) from one
    isotopy, with snapshots framing the same interior time."""
    spec = HamiltonianSpec.from_expression(COSCOS)
    iso = integrate_isotopy(spec, grid32, 8)
    dtA, dtB = 8e-3, 4e-3
    K = 6
    sA, sB = 8, 16
    cfgA = FlowConfig(
        grid=grid32, dt_fixed=dtA, conv_threshold=0.0,
        t_max=(sA + K) * dtA + 1e-9, snapshot_steps=(sA - K, sA, sA + K),
    )
    cfgB = FlowConfig(
        grid=grid32, dt_fixed=dtB, conv_threshold=0.0,
        t_max=(sB + K) * dtB + 1e-9, snapshot_steps=(sB - K, sB, sB + K),
    )
    famA = dg.evolve_two_param_family(iso, cfgA, s_stride=2)
    famB = dg.evolve_two_param_family(iso, cfgB, s_stride=1)
    return famA, famB, K, sA, sB


class TestTwoParamFamily:
    def test_needs_fixed_dt(self, grid32):
        iso = translation_isotopy(grid32, 0.2, 0.0, m=4)
        with pytest.raises(ValueError, match="dt_fixed"):
            dg.evolve_two_param_family(iso, FlowConfig(grid=grid32, conv_threshold=0.0))

    def test_needs_disabled_convergence(self, grid32):
        iso = translation_isotopy(grid32, 0.2, 0.0, m=4)
        cfg = FlowConfig(grid=grid32, dt_fixed=1e-3)
        with pytest.raises(ValueError, match="conv_threshold"):
            dg.evolve_two_param_family(iso, cfg)

    def test_stride_must_divide(self, grid32):
        iso = translation_isotopy(grid32, 0.2, 0.0, m=4)
        cfg = FlowConfig(grid=grid32, dt_fixed=1e-3, conv_threshold=0.0, t_max=2e-3)
        with pytest.raises(ValueError, match="stride"):
            dg.evolve_two_param_family(iso, cfg, s_stride=3)

    def test_aborted_flow_propagates(self, grid32):
        spec = HamiltonianSpec.from_expression(COSCOS)
        iso = integrate_isotopy(spec, grid32, 4)
        cfg = FlowConfig(grid=grid32, dt_fixed=1.0, conv_threshold=0.0, t_max=3.0)
        with pytest.raises(RuntimeError, match="aborted"):
            dg.evolve_two_param_family(iso, cfg)

    def test_flow_zero_stays_identity(self, family_pair, grid32):
        famA, _, K, sA, _ = family_pair
        state = famA.snapshot_state(0, sA + K)
        assert np.all(state.f.u.x.values == 0.0)
        assert np.all(state.f.u.y.values == 0.0)

    def test_missing_snapshot(self, family_pair):
        famA, _, _, _, _ = family_pair
        with pytest.raises(KeyError, match="snapshot"):
            famA.snapshot_state(0, 999)

    def test_thread_count_env(self, grid32, monkeypatch):
        monkeypatch.setenv("LAGFLOW_THREADS", "1")
        iso = translation_isotopy(grid32, 0.3, -0.1, m=4)
        cfg = FlowConfig(
            grid=grid32, dt_fixed=1e-3, conv_threshold=0.0,
            t_max=4e-3 + 1e-12, snapshot_steps=(2,),
        )
        fam = dg.evolve_two_param_family(iso, cfg)
        assert len(fam.flows) == 5


class TestTimeSlice:
    def test_slice_at_start_recovers_generator(self, family_pair, grid32):
        _, famB, _, _, _ = family_pair
        sl = dg.time_slice_isotopy(famB, 0)
        spec = HamiltonianSpec.from_expression(COSCOS)
        X = spec.vector_field(grid32, 0.5)
        mid = len(sl.maps) // 2
        assert np.abs(sl.velocities[mid].x.values - X.x.values).max() < 1e-4
        assert np.abs(sl.velocities[mid].y.values - X.y.values).max() < 1e-4

    def test_slice_maps_match_snapshots(self, family_pair):
        famA, _, K, sA, _ = family_pair
        sl = dg.time_slice_isotopy(famA, sA)
        for k in range(len(famA.s_nodes)):
            st = famA.snapshot_state(k, sA)
            assert np.array_equal(sl.maps[k].u.x.values, st.f.u.x.values)


class TestFluxEvolution:
    def test_identity_family_residual_exactly_zero(self, grid32):
        iso = integrate_isotopy(HamiltonianSpec.from_expression("0"), grid32, 4)
        cfg = FlowConfig(
            grid=grid32, dt_fixed=8e-3, conv_threshold=0.0,
            t_max=8 * 8e-3 + 1e-9, snapshot_steps=(2, 4, 6),
        )
        fam = dg.evolve_two_param_family(iso, cfg)
        assert dg.flux_evolution_residual(fam, 4, offset=2) < 1e-10
        gx, gy = dg.flux_period_identity(fam, 4, offset=2)
        assert gx < 1e-10 and gy < 1e-10

    def test_translation_family_residual_exactly_zero(self, grid32):
        iso = translation_isotopy(grid32, 0.4, -0.7, m=16, smooth_ends=True)
        cfg = FlowConfig(
            grid=grid32, dt_fixed=8e-3, conv_threshold=0.0,
            t_max=8 * 8e-3 + 1e-9, snapshot_steps=(2, 4, 6),
        )
        fam = dg.evolve_two_param_family(iso, cfg)
        # translations are flow fixed points, so every slice is t-independent
        assert dg.flux_evolution_residual(fam, 4, offset=2) < 1e-12
        # slice velocities come from second-order s-stencils, so the recovered
        # periods carry an O(ds^2) easing error rather than machine precision
        px, py = form_periods(dg.flux_form(dg.time_slice_isotopy(fam, 4)))
        assert px == pytest.approx(-TWO_PI * -0.7, rel=2e-2)
        assert py == pytest.approx(TWO_PI * 0.4, rel=2e-2)

    def test_residual_shrinks_under_refinement(self, family_pair):
        famA, famB, K, sA, sB = family_pair
        rA = dg.flux_evolution_residual(famA, sA, offset=K)
        rB = dg.flux_evolution_residual(famB, sB, offset=K)
        assert rA < 5e-3
        assert rA / rB > 1.7

    def test_period_identity_both_cycles(self, family_pair):
        famA, famB, K, sA, sB = family_pair
        for fam, step in ((famA, sA), (famB, sB)):
            gx, gy = dg.flux_period_identity(fam, step, offset=K)
            assert gx < 1e-8
            assert gy < 1e-8

    def test_k_potential_properties(self, family_pair):
        _, famB, _, _, sB = family_pair
        K_field = dg.k_potential(famB, sB)
        assert np.abs(K_field.values).max() < 1e-4
        dk = exterior_derivative(K_field)
        px, py = form_periods(dk)
        assert abs(px) < 1e-8 and abs(py) < 1e-8

    def test_k_potential_against_eulerian_oracle(self, family_pair):
        """Independent route: sample omega(X, H^) of the Eulerian fields at
        f(p) through splines, then Simpson over s."""
        _, famB, _, _, sB = family_pair
        sl = dg.time_slice_isotopy(famB, sB)
        grid = famB.grid
        mx, my = grid.mesh()
        count = len(sl.maps)
        vals = np.empty((count, grid.n, grid.n))
        for k, (f, X) in enumerate(zip(sl.maps, sl.velocities)):
            st = induced_geometry(f)
            hv = dg.base_velocity_field(st)
            phi = X.x.values * hv.y.values - X.y.values * hv.x.values
            qx = mx + f.u.x.values
            qy = my + f.u.y.values
            vals[k] = sample_periodic(ScalarField(grid, phi), qx, qy)
        ds = float(sl.s_nodes[1] - sl.s_nodes[0])
        oracle = simpson(vals, dx=ds, axis=0)
        direct = dg.k_potential(famB, sB)
        assert np.abs(direct.values - oracle).max() < 1e-7

    def test_k_potential_stride_validation(self, family_pair):
        _, famB, _, _, sB = family_pair
        with pytest.raises(ValueError, match="Simpson"):
            dg.k_potential(famB, sB, s_stride=8)
