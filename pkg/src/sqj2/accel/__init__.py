"""Functional accelerator emulation: cache model, schedule, and planner."""

from .model import AccelConfig, AccelRunStats, ConvInvocation, WeightBanks, accel_conv
from .planner import PlanItem, forward_accel, plan_network, run_node_on_accel

__all__ = [
    "AccelConfig", "AccelRunStats", "ConvInvocation", "WeightBanks", "accel_conv",
    "PlanItem", "forward_accel", "plan_network", "run_node_on_accel",
]
