"""Brain-inspired deep networks for image aesthetics, implemented on a small numpy kernel."""

__version__ = "0.1.0"
