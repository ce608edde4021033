"""Pool-based active-learning toolkit for multi-domain NLU data selection."""

__version__ = "0.1.0"
