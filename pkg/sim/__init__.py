"""Simulation core: kinematics, detection, mobility, transport and analysis."""
