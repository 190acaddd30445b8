"""Open multitype SIR epidemics on directed trade networks."""

__version__ = "1.0.0"
