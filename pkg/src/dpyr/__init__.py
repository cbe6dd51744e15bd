"""DPM inference as an unrolled network over multi-scale feature pyramids."""

__version__ = "0.1.0"
