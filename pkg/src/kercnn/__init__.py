"""Knowledge-embedded part-level attribute parsing."""

__version__ = "0.1.0"
