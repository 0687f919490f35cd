"""Continuous pain-intensity estimation from Histograms of Topographical features."""

__version__ = "0.1.0"
