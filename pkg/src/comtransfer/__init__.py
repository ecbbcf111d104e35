"""Cross-domain community search and detection."""

__version__ = "0.1.0"
