"""Convex restriction of nonlinear constraint systems and sequential convex restriction."""
from .errors import (CvxrsError, DimensionMismatch, EmptyBox, InfiniteMargin, NegativeRadius,
                     ParseError, RetrievalFailed, SingularJacobian, UnsupportedKind,
                     UnsupportedUncertaintyForm, ValidationError)
from .model import (Affine, BasisFunction, DecomposedSystem, Kind, NominalPoint, evaluate_f,
                    evaluate_h, jacobian_x, jacobian_z, nominal_point, validate)
from .envelopes import box_bound, make_envelope
from .restriction import (AdditiveNormBall, IntervalParametric, NoUncertainty, Objective, build_margin,
                          build_nominal, build_robust_additive, build_robust_parametric)
from .conic import ConvexProgram, QuadConstraint, SolverOptions, Status, solve
from .scrs import ScrsOptions, SolveReport, Termination, retrieve_implicit, robustness_margin, run_scrs
from .problemfile import dump_problem, parse_problem

__version__ = "0.1.0"
