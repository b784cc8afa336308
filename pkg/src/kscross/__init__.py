"""Finite-volume solver for the Keller-Segel model with nonlinear cross-diffusion."""
from .grid import Ball, Box, Grid, build_grid
from .model import ModelParams
from .solver import State, StepperConfig, run

__all__ = ["Ball", "Box", "Grid", "ModelParams", "State", "StepperConfig", "build_grid", "run"]
__version__ = "0.1.0"
