"""Multilevel Monte Carlo estimation of CDF, PDF, VaR and CVaR through parametric expectations."""

__version__ = "0.1.0"
