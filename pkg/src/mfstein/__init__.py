"""Mean-field approximation accuracy for population processes via Stein's method."""
__version__ = "0.1.0"
