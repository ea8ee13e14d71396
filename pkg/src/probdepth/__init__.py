"""Multi-frame depth from a plane-sweep cost volume modulated by an uncertain single-frame prior."""

__version__ = "0.1.0"
