"""Space-time infection risk maps for privacy-preserving contact tracing."""

__version__ = "0.1.0"
