"""Polarforming-antenna ISAC simulator.

Channel modeling, tensor-based user localization, and two-timescale
optimization of transceiver polarforming, precoding, and subarray placement.
"""

__version__ = "0.1.0"

from .channel import (
    GainPattern,
    ISOTROPIC,
    PhysicalConstants,
    TGPP_ELEMENT,
    UserState,
    dual_pol_response,
    effective_gain,
    polarformed_channel,
    stacked_channel,
    steering_vector,
    unpolarformed_los_channel,
)
from .codebook import (
    Codebook,
    PolarformingVector,
    build_codebook,
    project_to_codebook,
    project_to_codebook_joint,
)
from .geometry import (
    RotationAngles,
    SubarrayLayout,
    SubarrayPose,
    antenna_positions,
    local_direction,
    pointing_vector,
    rotation_matrix,
    subarray_normal,
)
from .harness import Scenario, ScenarioInstance, generate_scenario, run_two_timescale

__all__ = [
    "Codebook",
    "GainPattern",
    "ISOTROPIC",
    "PhysicalConstants",
    "PolarformingVector",
    "RotationAngles",
    "Scenario",
    "ScenarioInstance",
    "SubarrayLayout",
    "SubarrayPose",
    "TGPP_ELEMENT",
    "UserState",
    "antenna_positions",
    "build_codebook",
    "dual_pol_response",
    "effective_gain",
    "generate_scenario",
    "local_direction",
    "pointing_vector",
    "polarformed_channel",
    "project_to_codebook",
    "project_to_codebook_joint",
    "rotation_matrix",
    "run_two_timescale",
    "stacked_channel",
    "steering_vector",
    "subarray_normal",
    "unpolarformed_los_channel",
]
