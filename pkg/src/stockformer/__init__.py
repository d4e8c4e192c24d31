"""Stockformer: causality-screened transformer forecasting with trading backtests."""

__version__ = "0.1.0"
