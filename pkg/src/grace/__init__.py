"""Graph-augmented conditional quantile/moment learning and portfolio backtests."""

__version__ = "0.1.0"
