"""Forecasting toolkit for pavement deterioration on spatiotemporal graphs.

Irregular, asynchronous inspection records become nodes of a single directed
graph over (location, time) tuples; an attention-based graph model trained
with a self-contained reverse-mode autodiff core predicts deterioration at
future (location, time) queries.
"""

__version__ = "0.1.0"
