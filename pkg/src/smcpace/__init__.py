"""Simulation and bifurcation analysis of a smooth-muscle-cell pacemaker
model in three variants: the full three-variable model, its planar
reduction and the nondimensionalised planar model."""

__version__ = "0.1.0"
