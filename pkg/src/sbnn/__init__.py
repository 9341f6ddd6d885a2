"""Self-binarizing neural networks with comparison-based batch norm and XNOR inference."""

__version__ = "0.1.0"
