"""Ghost projection with random-matrix bases."""

__version__ = "0.1.0"
