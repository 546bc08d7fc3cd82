"""Wide-field NV magnetometry of multi-segment magnetic nanowires: forward simulation and inverse analysis."""

__version__ = "0.1.0"
