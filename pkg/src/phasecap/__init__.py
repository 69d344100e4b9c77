"""Capacity and optimal signalling for channels with b-bit phase quantization."""

__version__ = "0.1.0"
