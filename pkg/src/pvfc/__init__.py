"""Averaged-model simulator and controller synthesis for a grid-tied PV/fuel-cell plant."""

__version__ = "0.1.0"
