"""Reference implementations of the stdio adapter protocol."""

__version__ = "0.1.0"
