"""Monte Carlo solvers and checkers for backward SDEs driven by Brownian motion and Poisson jumps."""

__version__ = "0.1.0"
