"""Online POMDP planning with particle-subset beliefs and bounded entropy rewards."""

from .belief import (LIKELIHOOD_FLOOR, DegenerateBeliefError, ParticleBelief, SimplificationSchedule,
                     SimplifiedView, effective_sample_size, nested_views, priority_order, propagate,
                     propagate_and_reweight, refine, reweight, simplify, systematic_resample)
from .entropy import (BoundPair, EntropyBoundCache, boers_entropy, boers_terms, entropy_bounds,
                      entropy_term_bounds, kde_entropy, naive_weight_entropy, refine_entropy_bounds,
                      silverman_bandwidth, term_a_bounds, term_b_bounds)
from .lc import (LipschitzReward, belief_distance_l1, distance_reward, lc_node_bounds, lc_objective_bounds,
                 lc_reward_bounds)
from .models import (BeaconObservationModel, BeaconWorldConfig, DensityCounter, GaussianState,
                     GaussianTransitionModel, Models, expected_distance_to_goal, gaussian_entropy,
                     kalman_predict, kalman_step, model_peak_constants)
from .planner import (ExactSolution, PlanResult, PolicyTree, SimplifiedPlanner, exact_objective, plan,
                      prune_children, receding_horizon_run)
from .tree import (BeliefTree, BeliefTreeNode, build_despot_like, build_pomcp_like, build_powss_like,
                   build_tree)

__version__ = "0.1.0"
