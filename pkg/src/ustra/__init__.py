"""Accident anticipation from dashcam object tracks: a graph recurrent model
with a Bayesian head, built on a small self-contained autodiff engine."""

__version__ = "0.1.0"
