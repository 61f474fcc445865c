"""Environment-aware air-to-ground channel modeling toolkit."""

__version__ = "0.1.0"
