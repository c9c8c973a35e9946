"""Poisson-arrival MNL-choice revenue bandit: model, estimators, policies,
simulation harness, and a CLI for reproducing the regret experiments."""

__version__ = "0.1.0"

from .model import (Action, ArrivalBasis, FeatureAugmentedBasis, ModelParams,
                    PairwiseBasis, PriceVarietyBasis, ProductFeatures,
                    arrival_rate, choice_probabilities, expected_period_revenue,
                    instantaneous_regret, per_customer_revenue)
from .search import SearchConfig, oracle_best_action
from .estimation import (EstimationReport, FisherState, History,
                         PeriodObservation, accumulate_fisher, global_mle,
                         local_mle, mnl_loglik, mnl_loglik_grad, phi_matrix,
                         poisson_loglik, poisson_loglik_grad)
from .constants import PolicyConstants, compute_constants, compute_t0_T0
from .policy import PolicyConfig, TwoStagePolicy, build_initial_block, initial_sequence
from .baselines import BaselineKind, LearnThenEarnPolicy, OraclePolicy, RandomPolicy, make_policy
from .scenarios import (Scenario, adversarial_instance, load_scenario,
                        scenario_sim1, scenario_sim2, validate_scenario)
from .simulate import (Environment, MonteCarloResult, RegretTrace,
                       make_policy_config, monte_carlo, run_episode,
                       simulate_period)
