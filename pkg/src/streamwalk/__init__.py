"""Streaming random-walk corpus engine on compressed purely-functional trees."""

__version__ = "0.1.0"
