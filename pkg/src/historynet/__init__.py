"""Person-focused adversarial colorisation of historical images."""

__version__ = "0.1.0"
