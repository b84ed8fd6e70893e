"""Risk-sensitive nonzero-sum stochastic games on finite continuous-time Markov chains."""

__version__ = "0.1.0"
