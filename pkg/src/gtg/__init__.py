"""Grid-to-Graph relational reinforcement learning."""

__version__ = "0.1.0"
