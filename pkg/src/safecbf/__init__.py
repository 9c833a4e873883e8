"""Safe-by-construction neural controllers from control barrier functions."""

__version__ = "0.1.0"
