"""Contextual online learning with chaining: learners, environments and a regret harness."""

from .chaining import CoveringTree, CoverTooCoarse, FunctionDictionary, HierExp4, HierHedge, build_covering_tree
from .chaining_efficient import HierExp4Star, StarSchedule, star_schedule, wavelet_eval, wavelet_fit
from .core import (
    ActionGrid,
    FeedbackModel,
    ForbiddenQuery,
    GuardedFeedback,
    LossFunction,
    Play,
    RandomSource,
    Regularity,
    query_feedback,
    verify_regularity,
)
from .environments import EnvironmentSpec, auction_loss, generate_environment
from .experts import Exp3, Exp3RTB, HedgeState, adaptive_rate, hedge_distribution
from .flat_contextual import BallCover, ContextualExp3, ContextualRTB
from .harness import ExperimentConfig, comparator_value, emit_csv, run_experiment
from .kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION

__version__ = "0.1.0"
