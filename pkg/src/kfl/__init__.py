"""Fault localization over large C codebases from natural-language bug reports."""

__version__ = "0.1.0"
