"""Multimodal fake-news detection with entity-aware co-attention fusion."""

__version__ = "0.1.0"
