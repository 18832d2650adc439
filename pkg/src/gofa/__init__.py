"""Generative graph language modeling over text-attributed graphs."""

__version__ = "0.1.0"
