"""Bayesian data point selection with stochastic gradient Langevin dynamics."""

__version__ = "0.1.0"
