"""Regularized exp-concave empirical minimization: solvers, bounds and rate experiments."""

__version__ = "0.1.0"
