"""Ion shuttling and separation in a segmented dual linear trap."""
__version__ = "0.1.0"
