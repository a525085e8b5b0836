"""Utility modules: configuration, logging and small helpers."""
