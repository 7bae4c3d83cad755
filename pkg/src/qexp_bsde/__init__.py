"""Numerical laboratory for quadratic-exponential BSDEs with jumps.

Forward jump-diffusions on finite mark sets, Q_exp drivers and their
regularization cascade, lattice and regression backward solvers, BMO and
a priori estimates, Malliavin derivative BSDEs, and a declarative experiment
runner.
"""

from .drivers import (DRIVER_PRESETS, DriverSpec, RegularizationIndex, check_agamma, check_structure,
                      cole_hopf_driver, driver_from_config, exp_utility_driver, inf_convolve, j_gamma,
                      lipschitz_driver, linear_driver, qexp_saturating_driver, regularize, sup_convolve,
                      truncate_phi, zero_driver)
from .errors import (CapabilityError, CapacityError, ConditioningError, ConfigError, ContractError, DomainError,
                     ModelEvaluationError, PicardDivergenceError, PipelineError, QexpError, SaturationError)
from .estimates import (bmo_norm, bound_reports, compare_solutions, energy_check, jinf_norm, stability_gap,
                        stability_sweep, universal_bmo_bound, universal_y_bound)
from .experiments import SCENARIOS, ExperimentConfig, RunManifest, emit_report, run_experiment
from .lattice import LatticeModel, build_lattice
from .levy import (MODEL_PRESETS, LevyModel, MarkSpec, PathEnsemble, TimeGrid, additive_model, geometric_model,
                   insert_jump, linear_model, simulate_paths)
from .malliavin import (DerivativeDirection, check_representation, finite_difference_oracle, solve_malliavin_jump,
                        solve_malliavin_wiener)
from .problems import PROBLEM_PRESETS, BsdeProblem, solve_problem
from .regression import RegressionBasis, RegressionProjector
from .solver import BsdeSolution, PicardOptions, solve_lattice, solve_qexp_cascade, solve_regression

__version__ = "0.1.0"
