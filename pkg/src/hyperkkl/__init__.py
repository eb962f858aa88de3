"""Learning-based KKL observers for driven nonlinear systems."""

__version__ = "0.1.0"
