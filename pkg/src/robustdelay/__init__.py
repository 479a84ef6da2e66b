"""Robust delay-minimizing resource allocation for multi-device edge computing.

A neural allocator maps estimated channels and task intensities to transmit
powers, computing power and CPU cycle shares.  It is trained without labels
by drawing channel and intensity errors downstream of the network and
minimising an empirical quantile of the worst-case device delay.
"""

from .allocator import AllocatorModel, FeatureNormalizer, ResourceAllocation, allocate, map_to_allocation
from .channel import achievable_rates, rzf_beamformers, sample_channel_pair
from .compute import CpuModel, sample_task_profile, total_delays
from .harness import ExperimentConfig, load_config, run_oracle_comparison, run_sweep
from .robust import SCHEMES, empirical_quantile, robust_loss, worst_case_delays
from .system import NetworkRealization, SystemParams, sample_realizations
from .trainer import TrainingConfig, TrainingDivergence, evaluate, make_scenario_set, train

__version__ = "0.1.0"
