"""Secure generative data exchange for cross-silo federations."""
