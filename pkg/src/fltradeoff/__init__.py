"""Privacy, utility and efficiency tradeoffs of federated protection mechanisms."""

__version__ = "0.1.0"
