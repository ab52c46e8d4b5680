"""Model selection for summary ROC curves in diagnostic meta-analysis."""

__version__ = "0.1.0"
