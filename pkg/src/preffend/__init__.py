"""Preference-gated joint pattern/fact fake-news detection."""

__version__ = "0.1.0"
