"""Analytic and numerical routines: spectral quantities, outbreak probabilities, ODEs, large deviations."""
