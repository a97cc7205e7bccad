"""Topological crackle: persistence diagrams of noise far from the origin."""

__version__ = "0.1.0"
