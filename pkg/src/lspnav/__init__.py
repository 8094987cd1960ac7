"""Frontier-subgoal navigation on occupancy gridworlds with learned subgoal properties."""

from .gridworld import (
    Action, GeneratorConfig, GroundTruthEnvironment, Pose, generate_environment,
    load_environment, save_environment, sense, step,
)
from .mapping import PartialMap, integrate, new_partial_map
from .frontier import Frontier, extract_frontiers
from .planner import (
    Belief, Episode, EpisodeResult, LSPPolicy, NavConfig, OptimisticPolicy,
    SubgoalProperties, expected_cost, navigate_episode, select_subgoal,
)

__version__ = "0.1.0"
