"""Multi-modal population-graph GCNs built from ROI brain-network features."""

__version__ = "0.1.0"
