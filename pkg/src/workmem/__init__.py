"""Working Memory Network for textual question answering, built on a small
numpy autodiff engine."""

__version__ = "0.1.0"
