"""Classical shadows and time-averaged classical shadows of the 1D transverse-field Ising chain."""

__version__ = "0.1.0"
