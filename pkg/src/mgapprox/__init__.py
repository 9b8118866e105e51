"""Finite approximations of continuous-space N-player Markov games."""

__version__ = "0.1.0"

from .model import (
    Box,
    ContinuousGame,
    Discounted,
    DomainError,
    FiniteActions,
    FiniteHorizon,
    QuadratureError,
    ResourceError,
    validate_game,
)
from .quantize import (
    FiniteGame,
    build_action_net,
    build_finite_game,
    build_state_net,
    estimate_tv_modulus,
)
from .solve import (
    MarkovProfile,
    SolveReport,
    StationaryProfile,
    backward_induction_nash,
    nash_value_iteration,
    policy_evaluation,
    shapley_iteration,
    team_value_iteration,
)
from .stage_nash import matrix_game_value, nplayer_nash
from .truncate import LadderConfig, build_truncated_game, build_truncation, lift_from_truncation
from .verify import apply_extended_operator, certify_epsilon, extend_policy, fixed_point_residual
from .zoo import list_models, make_model
