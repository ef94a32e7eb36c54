"""Monte Carlo laboratory for ergodicity and limit theorems of SDEs."""

__version__ = "0.1.0"
