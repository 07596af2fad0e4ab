"""Simulation laboratory for join-the-shortest-queue in the super-Halfin-Whitt regime."""
__version__ = "0.1.0"
