"""Pass end-location prediction from football tracking data."""

__version__ = "0.1.0"
