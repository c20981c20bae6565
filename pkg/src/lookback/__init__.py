"""Lookback-mechanism workbench: causal model, toy transformer and intervention tools."""

__version__ = "0.1.0"

from .causal_model import UNKNOWN, Story, VisStatement, intervene_high_level, run_causal_model  # noqa: E402
from .dataset import AnnotatedSample, CounterfactualPair, make_pair, make_pairs, sample_story  # noqa: E402
from .toy_model import LayerSchedule, ModelConfig, build_model, forward, predict  # noqa: E402

__all__ = [
    "UNKNOWN", "Story", "VisStatement", "run_causal_model", "intervene_high_level",
    "AnnotatedSample", "CounterfactualPair", "make_pair", "make_pairs", "sample_story",
    "LayerSchedule", "ModelConfig", "build_model", "forward", "predict",
]
