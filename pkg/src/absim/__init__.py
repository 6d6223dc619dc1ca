"""Wave-packet scattering off toroidal magnets."""

__version__ = "0.1.0"
