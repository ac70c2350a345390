"""Toolkit for training and evaluating AI-generated image detectors.

Covers six-class corpora (real images plus five generator families), a
stochastic augmentation composer, four classifier variants built around a
vision transformer, and a perturbed-test-set generator for robustness checks.
"""

__version__ = "0.1.0"
