"""Distributionally robust optimization with density confidence-band ambiguity sets."""
__version__ = "0.1.0"
