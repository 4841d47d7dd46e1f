"""Endoscopy video to examination-record extraction."""

__version__ = "0.1.0"
