"""Last name -> state of residence -> spoken languages."""

__version__ = "0.1.0"
