"""Query performance prediction over sparse and dense retrieval results."""

__version__ = "0.1.0"
