"""Desk-scale animatable Gaussian head avatars reconstructed from synthesized
video under a simple-to-complex schedule, with a controllable synthetic oracle
standing in for the video generator."""

__version__ = "0.1.0"
