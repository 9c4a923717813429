"""Rare-event probability estimation with truncated Gaussian mixtures,
monotone set learning, and dominating-point importance sampling."""

from .gauss import (DegenerateTruncationError, GaussComponent, Rect,
                    log_density, rect_prob, sample, sample_truncated,
                    trunc_moments)
from .tgmm import (AffineStandardizer, DyingComponentError, FitReport,
                   TruncatedGMM, bic, em_step, fit, gmm_log_density,
                   gmm_sample, model_from_json, model_to_json,
                   responsibilities, standardize)
from .frontier import (DirectionMask, FrontierStore, NonMonotoneOutcomeError,
                       PieceBlowupError, Region, bound_indicators, classify,
                       frontier_from_json, frontier_to_json, insert,
                       outer_pieces)
from .dompoints import (DominatingPoint, OrthantPiece, SolverError,
                        inner_dominating, outer_dominating, solve_piece)
from .accel import (EstimateReport, MixtureISDistribution, ProcedureState,
                    bound_probabilities, build_is, crude_equiv_n, crude_mc,
                    estimate, is_log_density, likelihood_ratio, run_procedure,
                    sample_is)
from .scenario import (AVConfig, LaneChangeEvent, analytic_scenario,
                       check_monotone, lane_change_indicator,
                       lane_change_mask, simulate, ttc_from_range_rate)

__version__ = "0.1.0"
