"""Meta conditional generator for query-efficient score-based black-box attacks."""

__version__ = "0.1.0"
