"""Reference prediction server speaking the audit engine's line protocol."""

__version__ = "0.1.0"
