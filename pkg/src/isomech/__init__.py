"""Isotonic calibration of review scores from owner rankings."""
__version__ = "0.1.0"
