"""Survey-weighted estimation of under-five child mortality from birth histories."""
__version__ = "0.1.0"
