"""Stochastic-gradient Langevin laboratory."""
