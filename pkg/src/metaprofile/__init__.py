"""Few-shot user profiling from year-long behaviour heatmaps."""

__version__ = "0.1.0"
