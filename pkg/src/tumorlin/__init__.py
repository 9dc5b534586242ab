"""Linearized stability of the radial stationary state of a two-species free-boundary tumor model."""
from .errors import (Blowup, CFLViolation, ConditionViolated, DomainError, NoBracket,
                     NoThreshold, OperatorMismatch, SingularStep, SpectralViolation,
                     TumorlinError)
from .evolution import (ModeTrajectory, VolterraProblem, evolve_coupled, evolve_semigroup,
                        fit_decay, j_decay_check, kappa0, resolvent_L0, solve_volterra)
from .harmonics import (CoefficientField, dimension_d, eigenvalue_lambda, norm_X,
                        real_harmonic, synthesize)
from .kinetics import (ConditionReport, KineticParams, alpha_root, check_conditions,
                       eval_fg, eval_rates)
from .modes import (ModeData, OperatorTag, apply_operator, assemble_mode, functional_J,
                    functional_Jk, green_apply, solve_uk, translation_mode_residual)
from .stability import (DecayReport, GammaStarEstimate, SpectralConstants, decay_survey,
                        find_gamma_star, spectral_constants, theorem81_report)
from .stationary import (LocalExpansion, RadialGrid, SolverOptions, StationarySolution,
                         solve_c, solve_stationary, validate_stationary)

__all__ = [name for name in dir() if not name.startswith("_")]
