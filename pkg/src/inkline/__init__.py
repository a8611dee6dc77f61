"""Text- and style-conditioned handwriting line generation."""

__version__ = "0.1.0"
