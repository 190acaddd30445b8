"""Exact stochastic simulation and Monte Carlo ensembles."""
