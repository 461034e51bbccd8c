"""Time-reversal siamese training of a complex dual-path transformer speech enhancer."""

__version__ = "0.1.0"
