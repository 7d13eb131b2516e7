"""Attention-critic multi-agent DDPG with routing and particle-world environments."""

__version__ = "0.1.0"
