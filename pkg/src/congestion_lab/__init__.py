"""Traffic-layer congestion extraction and forecasting benchmarks."""

__version__ = "0.1.0"
