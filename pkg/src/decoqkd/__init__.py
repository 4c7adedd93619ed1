"""Decoherence-assisted BB84 simulator with an entangling-probe attack model."""
from .attack import (
    EveStateSet,
    HelstromUndefined,
    attack_qber_da,
    attack_qber_hv,
    eve_states_closed_form,
    eve_states_numeric,
    helstrom_error_prob,
    renyi_da,
    renyi_hv,
    renyi_total,
)
from .channel import ChannelSetting, JointState, bob_reduced_state, gamma_c, qber_analytic
from .protocol import NoiseModel, ProtocolConfig, QberReport, run_protocol
from .qmath import GaussianMode, overlap, trace_distance
from .timetag import (
    CoincidenceWindow,
    DetectionStream,
    FitError,
    assemble_key,
    find_coincidences,
    fit_gaussian_peak,
    g2_histogram,
)

__all__ = [
    "ChannelSetting",
    "CoincidenceWindow",
    "DetectionStream",
    "EveStateSet",
    "FitError",
    "GaussianMode",
    "HelstromUndefined",
    "JointState",
    "NoiseModel",
    "ProtocolConfig",
    "QberReport",
    "assemble_key",
    "attack_qber_da",
    "attack_qber_hv",
    "bob_reduced_state",
    "eve_states_closed_form",
    "eve_states_numeric",
    "find_coincidences",
    "fit_gaussian_peak",
    "g2_histogram",
    "gamma_c",
    "helstrom_error_prob",
    "overlap",
    "qber_analytic",
    "renyi_da",
    "renyi_hv",
    "renyi_total",
    "run_protocol",
    "trace_distance",
]
