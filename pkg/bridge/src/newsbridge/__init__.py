"""Offline adapter turning raw multimodal news items into the corpus JSONL
contract consumed by the newsfusion trainer."""

__version__ = "0.1.0"
