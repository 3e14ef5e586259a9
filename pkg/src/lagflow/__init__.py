"""Mean curvature flow of Hamiltonian torus diffeomorphisms.

Simulates graphs of symplectomorphisms of the flat 2-torus as Lagrangian
surfaces in T^2 x T^2 moving by mean curvature, together with the flux,
Lagrangian-angle and Maslov diagnostics that certify the Hamiltonian
isotopy class is preserved along the flow.
"""

from ._kernels import BACKEND as kernel_backend
from .grids import GridSpec, OneForm, ScalarField, VectorField2, form_periods
from .hamiltonian import (
    HamiltonianSpec,
    SymplecticIsotopy,
    integrate_isotopy,
    time_one_map,
    translation_isotopy,
)
from .torus_maps import TorusMap, compose, distance_to, invert, jacobian, symplectic_defect
from .mcf import FlowConfig, FlowHistory, dt_cfl, induced_geometry, mcf_step, run_flow
from .diagnostics import (
    accumulate_flux,
    angle_consistency,
    area,
    evolve_two_param_family,
    flux_evolution_residual,
    flux_form,
    flux_periods,
    k_potential,
    lagrangian_angle,
    maslov_windings,
    mean_curvature_form,
    time_slice_isotopy,
)
from .session import RunConfig, cmd_simulate, cmd_verify, load_config

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "kernel_backend",
    "GridSpec",
    "ScalarField",
    "VectorField2",
    "OneForm",
    "form_periods",
    "HamiltonianSpec",
    "SymplecticIsotopy",
    "integrate_isotopy",
    "time_one_map",
    "translation_isotopy",
    "TorusMap",
    "compose",
    "invert",
    "jacobian",
    "symplectic_defect",
    "distance_to",
    "FlowConfig",
    "FlowHistory",
    "dt_cfl",
    "induced_geometry",
    "mcf_step",
    "run_flow",
    "accumulate_flux",
    "angle_consistency",
    "area",
    "evolve_two_param_family",
    "flux_evolution_residual",
    "flux_form",
    "flux_periods",
    "k_potential",
    "lagrangian_angle",
    "maslov_windings",
    "mean_curvature_form",
    "time_slice_isotopy",
    "cmd_simulate",
    "cmd_verify",
    "load_config",
    "RunConfig",
]
