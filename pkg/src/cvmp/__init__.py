"""Max-pressure signal control with connected-vehicle travel-time weights on a mesoscopic simulator."""

from .controllers import (
    ControllerSpec,
    MovementTrafficState,
    WeightFunction,
    WeightKind,
    controller_from_config,
    decide,
    movement_state,
    pressure,
    run_policy,
)
from .mesosim import SimState, step, travel_time_tau
from .network import Network, ScenarioError, build_network, emit
from .observe import PenetrationMap, expectation_check, observe
from .scenario import Scenario, load_scenario, scenario_from_dict
from .stability import (
    check_admissible,
    drift_negativity_test,
    lyapunov_trace,
    necessary_condition_monitor,
)

__all__ = [
    "ControllerSpec", "MovementTrafficState", "Network", "PenetrationMap", "Scenario", "ScenarioError",
    "SimState", "WeightFunction", "WeightKind", "build_network", "check_admissible", "controller_from_config",
    "decide", "drift_negativity_test", "emit", "expectation_check", "load_scenario", "lyapunov_trace",
    "movement_state", "necessary_condition_monitor", "observe", "pressure", "run_policy", "scenario_from_dict",
    "step", "travel_time_tau",
]
