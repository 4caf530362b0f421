"""Random access with multi-packet reception for uplink VLC: channel model,
SIC rate tables, effective-capacity analytics, IWO-DE access optimization
and a slot-level simulator."""
from .channel import (ChannelDomainError, Geometry, NoiseConfig, OpticsConfig, channel_matrix,
                      concentrator_gain, lambertian_order, los_gain, noise_variance,
                      received_optical_power)
from .optimizer import (AccessProblem, Candidate, OptimizationResult, OptimizerParams, optimize,
                        pareto_dominates)
from .qos import (effective_bandwidth_poisson, effective_capacities, effective_capacity,
                  evaluate_qos, saturation_throughput, throughput_gradient)
from .scenario import Scenario, ScenarioError, parse_scenario, scenario_from_dict
from .sic import FilterKind, NoiseNorm, SingularChannelError, layer_sinrs
from .simulator import SimConfig, SimResult, run_slots
from .states import FeasibleStateTable, TrafficSpec, build_rate_table, enumerate_feasible

__version__ = "0.1.0"

__all__ = [
    "AccessProblem", "Candidate", "ChannelDomainError", "FeasibleStateTable", "FilterKind",
    "Geometry", "NoiseConfig", "NoiseNorm", "OptimizationResult", "OptimizerParams",
    "OpticsConfig", "Scenario", "ScenarioError", "SimConfig", "SimResult", "SingularChannelError",
    "TrafficSpec", "build_rate_table", "channel_matrix", "concentrator_gain",
    "effective_bandwidth_poisson", "effective_capacities", "effective_capacity",
    "enumerate_feasible", "evaluate_qos", "lambertian_order", "layer_sinrs", "los_gain",
    "noise_variance", "optimize", "parse_scenario", "pareto_dominates",
    "received_optical_power", "run_slots", "saturation_throughput", "scenario_from_dict",
    "throughput_gradient",
]
