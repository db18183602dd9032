"""Fleet reallocation for equitable access in frequency-based transit networks."""

__version__ = "0.1.0"
