"""Matching and pricing mechanisms for drive-by-sensing taxi fleets.

Implements two e-hailing double-auction mechanisms over a meshed city grid:
a welfare-maximizing benchmark with pivot (VCG) pricing, and a mechanism that
maximizes the sensing externality of matched trips and redistributes the
social welfare by sensing contribution. Includes an epoch-driven fleet
simulator and a randomized property harness for the mechanism guarantees.
"""

from .assignment import (CandidateEdge, MatchingProblem, MatchingSolution,
                         build_candidates, marginal_objective,
                         problem_from_json, problem_to_json,
                         solve_sensing_max, solve_welfare_max)
from .errors import ConfigurationError, ContractError, GeometryError
from .gridworld import (CellRoute, GridWorld, ProspectModel, build_grid,
                        build_prospect_model, load_world, opportunity_cost,
                        order_prospect, route)
from .market import (DriverState, DriverStatus, Quote, Rates, RiderRequest,
                     driver_valuation, participant_utilities, rider_valuation,
                     social_welfare)
from .pricing import (DS, VCG, EpochSettlement, PricedMatch, compute_marginals,
                      ds_prices, settle_epoch, vcg_prices)
from .sensing import (CoverageState, SensingParams, commit_route,
                      coverage_rate, marginal_gain, sensing_quality,
                      total_sensing_utility)
from .simengine import (KpiReport, ScenarioConfig, apply_reporting,
                        default_world, generate_demand, reposition_vacant,
                        run_scenario)

__version__ = "0.1.0"
