"""Generative agent-based social media simulation with friendship-paradox analysis."""

__version__ = "0.1.0"
