"""Two-level autonomous-driving controller: MIQP model-predictive planning
with STL traffic rules, plus detailed-model runtime monitoring."""
from .controller import ControllerOutput, MpcConfig, TwoLevelController
from .scenario import Scenario, load_scenario
from .vehicle import ControlInput, DetailedState, SimpleState, VehicleParams

__all__ = ["ControlInput", "ControllerOutput", "DetailedState", "MpcConfig", "Scenario", "SimpleState",
           "TwoLevelController", "VehicleParams", "load_scenario"]
