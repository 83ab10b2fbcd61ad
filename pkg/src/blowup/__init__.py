"""Multi-bubble reduced energies for perturbed critical elliptic problems."""
__version__ = "0.1.0"
