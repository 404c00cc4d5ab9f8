"""Offline rendering of experiment metrics: learning curves and episode-time
density plots. Consumes the documented metrics CSV schema and nothing else."""

__version__ = "0.1.0"
