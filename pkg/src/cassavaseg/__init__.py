"""Cassava root necrosis scoring by semantic segmentation."""

__version__ = "0.1.0"
