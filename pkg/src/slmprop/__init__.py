"""slmprop: short-long dual-memory slice propagation for volumetric masks."""

__version__ = "0.1.0"
