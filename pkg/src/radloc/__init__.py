"""Model-based radio localization and sensing toolkit."""

__version__ = "0.1.0"
