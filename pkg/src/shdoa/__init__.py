"""Direction-of-arrival estimation with moving spherical microphone arrays."""

__version__ = "0.1.0"
