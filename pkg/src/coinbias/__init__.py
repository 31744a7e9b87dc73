"""Bayesian and frequentist analysis of same-side and heads-tails bias in coin flips."""

__version__ = "0.1.0"
