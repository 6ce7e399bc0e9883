"""Multicell massive-MIMO sum-rate simulator and power-allocation library.

Modules:
    topology    hexagonal layout, user drops, large-scale fading
    mcrate      Monte Carlo ergodic rates with ZF receivers/precoders
    closedform  uplink rate bounds/approximation, downlink lower bound
    allocation  water-filling and the per-cell allocation strategies
    network     scheduled per-cell rounds and the joint benchmark
    cli         seeded batch experiments with CSV/manifest outputs
"""

from .allocation import (
    WaterfillCoefficients,
    WaterfillResult,
    downlink_alloc,
    equal_alloc,
    relative_gain,
    uplink_alloc_approx,
    uplink_alloc_lower_bound,
    uplink_alloc_upper_bound,
    waterfill,
)
from .closedform import (
    DownlinkProfile,
    HypoexpSpec,
    InterferenceProfile,
    characteristic_coefficients,
    downlink_lower_bound,
    downlink_profile,
    exp_integral_e1,
    mean_inv_one_plus,
    uplink_approximation,
    uplink_lower_bound,
    uplink_profile,
    uplink_upper_bound,
)
from .mcrate import (
    ChannelRealization,
    IllConditionedChannelError,
    PowerAllocation,
    RateEstimate,
    downlink_rate_mc,
    uplink_rate_mc,
    zf_precoder,
    zf_receiver,
)
from .network import (
    JointResult,
    NetworkState,
    network_sum_rate,
    run_joint,
    run_scheduled,
)
from .topology import (
    CellTopology,
    NetworkConfig,
    build_topology,
    large_scale_gain,
    schedule_groups,
)

__version__ = "0.1.0"

__all__ = [
    "CellTopology",
    "ChannelRealization",
    "DownlinkProfile",
    "HypoexpSpec",
    "IllConditionedChannelError",
    "InterferenceProfile",
    "JointResult",
    "NetworkConfig",
    "NetworkState",
    "PowerAllocation",
    "RateEstimate",
    "WaterfillCoefficients",
    "WaterfillResult",
    "build_topology",
    "characteristic_coefficients",
    "downlink_alloc",
    "downlink_lower_bound",
    "downlink_profile",
    "downlink_rate_mc",
    "equal_alloc",
    "exp_integral_e1",
    "large_scale_gain",
    "mean_inv_one_plus",
    "network_sum_rate",
    "relative_gain",
    "run_joint",
    "run_scheduled",
    "schedule_groups",
    "uplink_alloc_approx",
    "uplink_alloc_lower_bound",
    "uplink_alloc_upper_bound",
    "uplink_approximation",
    "uplink_lower_bound",
    "uplink_profile",
    "uplink_rate_mc",
    "uplink_upper_bound",
    "waterfill",
    "zf_precoder",
    "zf_receiver",
]
