"""Phasor-domain study of distance relays on lines compensated by an IPFC."""

__version__ = "0.1.0"
