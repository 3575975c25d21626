"""Forecasting, flexibility surrogates and scheduling for home energy management systems."""

__version__ = "0.1.0"
