"""hqrec: multimodal sequential recommendation with hierarchical
query-attention encoders, on a small numpy reverse-mode engine."""

__version__ = "0.1.0"
