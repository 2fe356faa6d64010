"""In-storage SGD simulator for multi-channel SSDs."""

__version__ = "0.1.0"
