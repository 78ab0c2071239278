"""Simulation and distributional reinforcement learning for energy management
of a solar-powered artificial upwelling system."""

__version__ = "0.1.0"
