"""Sliding-window prescreening and classification for asynchronous MI decoding."""

__version__ = "0.1.0"
