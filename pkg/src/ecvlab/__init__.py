"""Toy-scale GRPO / ECVGPO laboratory for studying policy entropy dynamics."""

__version__ = "0.1.0"
