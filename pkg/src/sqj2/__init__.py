"""int8 CNN inference the way the accelerator hardware does it.

The package models an FPGA convolution engine at three levels: reference
int8/float operators, a functional emulation of the on-chip caches and the
line-buffer schedule, and a calibrated cycle/resource model with a
design-space sweep on top. The emulation must match the reference bit for
bit; the cycle model must match its event simulator to the cycle.
"""

from .accel.model import AccelConfig, AccelRunStats, ConvInvocation, WeightBanks, accel_conv
from .accel.planner import forward_accel, plan_network
from .engines import ENGINES, run_forward
from .fmap import FeatureMap, read_tensor, write_tensor
from .fxp import FxpFormat
from .graph import (ConvSpec, NetworkGraph, PoolSpec, load_network, load_network_file,
                    save_network, save_network_file)
from .params import ParamBlob, read_params, write_params
from .perf import CycleReport, ModelParams, layer_latency, network_latency, simulate_layer
from .quantizer import QuantScheme, choose_format, quantize_network
from .reference import conv_ref, forward_ref, maxpool_ref
from .resources import BUDGETS, DeviceBudget, ResourceEstimate, estimate_resources, size_caches
from .transforms import reshape_first_layer, transform_network
from .dse import DsePoint, DseResult, dse

__version__ = "0.1.0"

__all__ = [
    "AccelConfig", "AccelRunStats", "ConvInvocation", "WeightBanks", "accel_conv",
    "forward_accel", "plan_network", "ENGINES", "run_forward",
    "FeatureMap", "read_tensor", "write_tensor", "FxpFormat",
    "ConvSpec", "NetworkGraph", "PoolSpec", "load_network", "load_network_file",
    "save_network", "save_network_file", "ParamBlob", "read_params", "write_params",
    "CycleReport", "ModelParams", "layer_latency", "network_latency", "simulate_layer",
    "QuantScheme", "choose_format", "quantize_network",
    "conv_ref", "forward_ref", "maxpool_ref",
    "BUDGETS", "DeviceBudget", "ResourceEstimate", "estimate_resources", "size_caches",
    "reshape_first_layer", "transform_network", "DsePoint", "DseResult", "dse",
    "__version__",
]
