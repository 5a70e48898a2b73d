"""Deterministic simulator and analysis toolkit for SNARE-style accountable consensus."""

__version__ = "0.1.0"
