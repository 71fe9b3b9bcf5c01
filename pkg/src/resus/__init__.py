"""RESUS - cold-start CTR prediction with residual user preferences."""

__version__ = "0.1.0"
