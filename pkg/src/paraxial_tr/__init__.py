"""Time-reversal refocusing through white-noise paraxial random media."""

__version__ = "0.1.0"
