"""Prompt-tuned dual-encoder retrieval for multi-modal dialogs."""

__version__ = "0.1.0"
