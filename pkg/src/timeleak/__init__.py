"""Timing side-channel leakage analysis for QKD detector timestamps."""

from .timing_model import DetectorResponse, TimeGrid, density, integrate_density, moments, sample, with_offset
from .leakage import (
    BitChannel,
    LeakageReport,
    ReceiverModel,
    SweepResult,
    average_leakage,
    best_grouping,
    binned_mutual_information,
    binned_mutual_information_phase_averaged,
    compensated_leakage,
    delay_sweep,
    mixture_density,
    mutual_information,
    privacy_amplification_budget,
    table1_receiver,
)
from .estimation import FitResult, TimingHistogram, fit_response, goodness_of_fit, histogram_from_samples, initial_guess
from .simulation import attack_report, eve_map_attack, publish, simulate_session

__version__ = "0.1.0"
