"""Graph-filter adaptation on expanding graphs with multi-agent policy gradients."""

__version__ = "0.1.0"
