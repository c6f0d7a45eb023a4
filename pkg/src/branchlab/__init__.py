"""Numerical laboratory for branching diffusions in periodic media."""

from .branching_sim import (CensoringError, CountStatistics, Ensemble,
                            MomentEstimate, SimConfig, compare_to_theory,
                            count_statistics, make_cube_target, run_replicas,
                            step_ensemble)
from .homogenization import (effective_diffusivity, effective_drift,
                             solve_cell_problem, stationary_density)
from .intermittency import (GammaEvaluator, RegionReport, gamma1,
                            intermittency_gap, region_scan)
from .moments import (FkTable, MomentField, assemble_raw_moment,
                      check_local_limit, counting_target, shift_to_cell,
                      solve_hierarchy, solve_mk, stirling, total_moment_fk)
from .periodic_media import (MediaConfigError, MediaSpec, TorusGrid, TrigSeries,
                             constant_media, parse_media_spec, sample_field,
                             trig_interpolate)
from .rate_function import (LegendrePoint, RateProfile, ReachabilityError,
                            aronson_bound, calibrate_aronson, compare_kernel,
                            effective_velocity, front_normalizer,
                            kernel_asymptotic, legendre_transform)
from .torus_spectral import (EigenConvergenceError, EigenTriple,
                             SemigroupInstabilityError, SemigroupStepper,
                             TiltedOperator, assemble_tilted, delta_vector,
                             evolve_semigroup, kernel_column, principal_eigen)

__all__ = [
    "CensoringError", "CountStatistics", "Ensemble", "MomentEstimate",
    "SimConfig", "compare_to_theory", "count_statistics", "make_cube_target",
    "run_replicas", "step_ensemble",
    "effective_diffusivity", "effective_drift", "solve_cell_problem",
    "stationary_density",
    "GammaEvaluator", "RegionReport", "gamma1", "intermittency_gap",
    "region_scan",
    "FkTable", "MomentField", "assemble_raw_moment", "check_local_limit",
    "counting_target", "shift_to_cell", "solve_hierarchy", "solve_mk",
    "stirling", "total_moment_fk",
    "MediaConfigError", "MediaSpec", "TorusGrid", "TrigSeries",
    "constant_media", "parse_media_spec", "sample_field", "trig_interpolate",
    "LegendrePoint", "RateProfile", "ReachabilityError", "aronson_bound",
    "calibrate_aronson", "compare_kernel", "effective_velocity",
    "front_normalizer", "kernel_asymptotic", "legendre_transform",
    "EigenConvergenceError", "EigenTriple", "SemigroupInstabilityError",
    "SemigroupStepper", "TiltedOperator", "assemble_tilted", "delta_vector",
    "evolve_semigroup", "kernel_column", "principal_eigen",
]

__version__ = "0.1.0"
