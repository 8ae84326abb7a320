"""Taint-guided utility learning, fault localization and repair for MiniBot controllers."""

__version__ = "0.1.0"
