"""SenGen: sentence-level neural variational topic model."""

__version__ = "0.1.0"
