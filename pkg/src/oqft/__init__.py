"""Objective-field trajectory simulation for truncated bosonic modes."""

__version__ = "0.1.0"
