"""Mean/SD estimation from quantile summaries, bootstrap SEs and random-effects meta-analysis."""

__version__ = "0.1.0"
