"""tracelearn - learn normal process behaviour from system traces and flag anomalous runs."""

__version__ = "0.1.0"
