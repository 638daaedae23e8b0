"""Calibration-free stereo reconstruction of firefly flashes from 360-degree video."""

__version__ = "0.1.0"
