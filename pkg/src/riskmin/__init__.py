"""Local-complexity excess-risk bounds, penalized model selection, and sparse ERM."""

__version__ = "0.1.0"
