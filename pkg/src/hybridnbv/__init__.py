"""Next-best-view selection with hybrid rendering and positional uncertainty."""

__version__ = "0.1.0"
