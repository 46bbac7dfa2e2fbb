"""Risk stratification and survival statistics for vascular-damage scores."""

__version__ = "0.1.0"
