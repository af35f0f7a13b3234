"""Key-rate simulation for fully passive measurement-device-independent QKD."""

from .channel import BellGains, ChannelParams, EncodedState, bell_gains
from .expectations import GainTable, QuadratureSpec, build_gain_table
from .keyrate import (KeyRateResult, ProtocolConfig, active_rate,
                      binary_entropy, optimize_rate, passive_rate)
from .montecarlo import TrialTally, compare_to_analytic, simulate_trials
from .regions import RegionLabel, RegionParams, RegionSpec, classify
from .source import SourceParams, SourceSample, interfere, sample_source

__version__ = "0.1.0"

__all__ = [
    "BellGains", "ChannelParams", "EncodedState", "GainTable",
    "KeyRateResult", "ProtocolConfig", "QuadratureSpec", "RegionLabel",
    "RegionParams", "RegionSpec", "SourceParams", "SourceSample",
    "TrialTally", "active_rate", "bell_gains", "binary_entropy",
    "build_gain_table", "classify", "compare_to_analytic", "interfere",
    "optimize_rate", "passive_rate", "sample_source", "simulate_trials",
]
