"""Distributed multi-target tracking simulator with track-consensus fusion
and label-spoofing attack models."""

__version__ = "0.1.0"
