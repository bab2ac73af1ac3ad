"""Tree-determinant Monte Carlo for weakly interacting lattice fermions."""

__version__ = "0.1.0"
