"""Bayesian Bellman operators: linear and nonlinear policy evaluation and RP-BBAC."""
