"""Planar 7-link biped simulator with penalty ground contact."""
from .model import BipedModel, load_model, default_model
from .sim import (BipedState, ContactReport, SimulationBlowup, com_state, contact_forces,
                  mass_matrix, bias_forces, mechanical_energy, set_pose_from_reference, step_n,
                  step, write_trajectory)

__all__ = [
    "BipedModel", "load_model", "default_model", "BipedState", "ContactReport",
    "SimulationBlowup", "com_state", "contact_forces", "mass_matrix", "bias_forces",
    "mechanical_energy", "set_pose_from_reference", "step", "step_n", "write_trajectory",
]
