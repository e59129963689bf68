"""Self-supervised dual-path prototypical murmur detection on phonocardiograms."""

__version__ = "0.1.0"
