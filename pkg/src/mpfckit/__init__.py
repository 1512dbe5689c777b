"""Model predictive path following and trajectory tracking for a two-link arm."""

__version__ = "0.1.0"
