"""Online trajectory planning with a spatial-temporal graph network."""

__version__ = "0.1.0"
