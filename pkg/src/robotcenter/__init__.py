"""Two-level resource manager for fleets of heterogeneous robots."""

__version__ = "0.1.0"
