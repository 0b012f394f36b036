"""Spectral solvers for (-eps Delta_N)^{1/2} u + u = u_+^p on boxes with Neumann walls."""

__version__ = "0.1.0"

from .domain import (EigenBasisDomain, NodalField, RectDomain, SpectralField, build_domain,
                     constant, mode, to_nodal, to_spectral)
from .experiments import SweepRecord, run_sweep
from .keller_segel import KSParams, keller_segel_reconstruct
from .linear import solve_linear
from .operators import frac_apply, heat_kernel, poisson_kernel
from .semilinear import SemilinearConfig, SolutionReport, SolverError, perturbed_restart_scan, solve

__all__ = [
    "EigenBasisDomain", "NodalField", "RectDomain", "SpectralField", "build_domain",
    "constant", "mode", "to_nodal", "to_spectral", "SweepRecord", "run_sweep", "KSParams",
    "keller_segel_reconstruct", "solve_linear", "frac_apply", "heat_kernel", "poisson_kernel",
    "SemilinearConfig", "SolutionReport", "SolverError", "perturbed_restart_scan", "solve",
]
