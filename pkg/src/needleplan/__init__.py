"""CT-guided needle insertion planning toolkit."""

__version__ = "0.1.0"
