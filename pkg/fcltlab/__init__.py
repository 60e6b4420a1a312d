"""fcltlab: exact diffusion coefficients and FCLT checks for finite Markov chains."""

__version__ = "0.1.0"
