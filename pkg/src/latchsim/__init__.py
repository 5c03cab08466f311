"""Planar simulator and controllers for robotic boats that latch onto docks, dummy platforms and each other."""
from .allocation import AllocationModel, forces_to_wrench, wrench_to_forces
from .dynamics import BoatState, BodyParams, DisturbanceSignal, sample_disturbance, step_body
from .sim import EventLog, JointConstraint, Metrics, Scenario, ScenarioError, SolverFault, apply_joint, metrics, run

__version__ = "0.1.0"

__all__ = [
    "AllocationModel", "forces_to_wrench", "wrench_to_forces",
    "BodyParams", "BoatState", "DisturbanceSignal", "sample_disturbance", "step_body",
    "EventLog", "JointConstraint", "Metrics", "Scenario", "ScenarioError", "SolverFault",
    "apply_joint", "metrics", "run",
]
