"""Stochastic bilevel placement of series FACTS devices for wind integration."""

__version__ = "0.1.0"
