"""Monte Carlo laboratory for quadratic-growth backward SDEs and their g-expectations."""

__version__ = "0.1.0"

from .bsde_solver import BsdeSolution, BsdeSolver, RegressionConfig, solve_bsde, solve_colehopf, solve_linear_oracle
from .config import ExperimentConfig, ParseError, ValidationError, parse_config
from .exceptions import (BadParameters, CapTooSmall, ConfigurationError, DegenerateInterval, DimensionMismatch,
                         LadderTooCoarse, PicardDiverged, QbsdeError, RankDeficientWarning, UnknownCatalogEntry,
                         UnknownGenerator, ZeroSteps)
from .forward_sde import SdeCoefficients, first_exit, instantiate_coefficients, simulate_euler, stop_paths
from .generators import (AssumptionParams, GeneratorSpec, audit_sample, check_assumptions, compare_on_grid,
                         instantiate_generator)
from .gexpectation import (GExpectationQuery, ProbeConfig, PropertyReport, conditional_gexp,
                           converse_comparison_probe, horizon_consistency_check, self_financing_check,
                           translation_invariance_check, uniqueness_probe, zero_interest_check)
from .regression import ConditionalExpectationRegressor, regress_condexp
from .representation import (EpsilonLadder, RepresentationQuery, RepresentationReport, bias_budget, bound_audit,
                             limit_study, quotient_estimate)
from .stochastic_core import PathBundle, RngPolicy, TimeGrid, make_grid, sample_brownian
from .terminals import TerminalFunctional, default_battery, instantiate_terminal
