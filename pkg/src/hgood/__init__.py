"""Few-shot node classification on heterogeneous graphs under distribution shift."""

__version__ = "0.1.0"
