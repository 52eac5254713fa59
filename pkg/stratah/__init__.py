"""Stratified average-hazard inference toolkit."""

__version__ = "0.1.0"
