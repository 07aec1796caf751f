"""Random Conley decomposition on box grids."""

__version__ = "0.1.0"
