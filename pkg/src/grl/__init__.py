"""Kernel-based reinforcement learning with parametric actions."""

__version__ = "0.1.0"
