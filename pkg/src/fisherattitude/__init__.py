"""Bayesian attitude estimation with the matrix Fisher distribution."""
