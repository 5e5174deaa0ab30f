"""nexus - a dual-loop planning and code-acting agent runtime."""

__version__ = "0.1.0"
