"""Simulator of sparsity-dependent AMX timing and the Thor weight-mask attack."""

from .amx import PerformanceState, TimingModel, TimingModelConfig
from .attack import AttackParams, CandidatePair, ScoreTable, infer_weights, run_attack
from .countermeasure import KeeperConfig, PowerModel, power_overhead, wrap_victim
from .errors import (CalibrationError, ConfigurationError, PatternError, ThorSimError,
                     UndefinedOverheadError)
from .patterns import TilePattern
from .victim import Victim, VictimConfig

__all__ = [
    "AttackParams", "CalibrationError", "CandidatePair", "ConfigurationError", "KeeperConfig",
    "PatternError", "PerformanceState", "PowerModel", "ScoreTable", "ThorSimError", "TilePattern",
    "TimingModel", "TimingModelConfig", "UndefinedOverheadError", "Victim", "VictimConfig",
    "infer_weights", "power_overhead", "run_attack", "wrap_victim",
]
