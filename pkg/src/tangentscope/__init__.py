"""Computable approximate identities, tangential approach regions and dyadic bases."""

__version__ = "0.1.0"
