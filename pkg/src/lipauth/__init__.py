"""Lip-based biometric authentication with a two-pathway video embedding network."""

__version__ = "0.1.0"
