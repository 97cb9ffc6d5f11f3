"""Randomized recursive preconditioning for regression and PD linear systems."""

__version__ = "0.1.0"
