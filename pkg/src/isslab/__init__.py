"""Backstepping boundary-control laboratory for a 1-D parabolic plant with
a time-varying reaction coefficient and in-domain, Robin, Dirichlet, and
measurement disturbances."""

from .analysis import (SweepResult, dcheck_bound, fit_decay_rate, iss_sweep,
                       linf_series, lyapunov_monitor, transform_consistency)
from .gains import GainProfile, compute_kp, solve_gains, solve_p, validate_p0
from .kernels import (IterationError, KernelKind, ResidualReport, TriGrid,
                      build_grid, eval_k, eval_m, eval_m_z_at0, invert_kernel,
                      pde_residual)
from .sim import (FAMILIES, PRESETS, DivergenceError, Resources, Scenario,
                  SimMode, SimTrace, build_resources, family_member,
                  get_preset, simulate, simulate_coupled, step_plant)
from .transforms import (StateField, control_output_feedback,
                         control_state_feedback, forward_transform,
                         inverse_transform)

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "FAMILIES", "GainProfile", "IterationError",
    "KernelKind", "PRESETS", "ResidualReport", "Resources", "Scenario",
    "SimMode", "SimTrace", "StateField", "SweepResult", "TriGrid",
    "build_grid", "build_resources", "compute_kp", "control_output_feedback",
    "control_state_feedback", "dcheck_bound", "eval_k", "eval_m",
    "eval_m_z_at0", "family_member", "fit_decay_rate", "forward_transform",
    "get_preset", "invert_kernel", "inverse_transform", "iss_sweep",
    "linf_series", "lyapunov_monitor", "pde_residual", "simulate",
    "simulate_coupled", "solve_gains", "solve_p", "step_plant",
    "transform_consistency", "validate_p0",
]
