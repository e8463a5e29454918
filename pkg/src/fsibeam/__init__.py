"""Viscous fluid in a periodic channel under a damped elastic beam."""
__version__ = "0.1.0"
