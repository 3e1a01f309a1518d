"""Small magnetic inclusions: polarization tensors, forward fields, inversion."""
__version__ = "0.1.0"
