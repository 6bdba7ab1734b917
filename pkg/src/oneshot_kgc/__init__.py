"""One-shot knowledge-graph link prediction with a learned matching metric."""

__version__ = "0.1.0"
