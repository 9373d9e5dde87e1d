"""Space-filtration discretisation of Wiener functionals on dyadic skeletons."""

__version__ = "0.1.0"
