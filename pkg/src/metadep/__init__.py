"""Few-shot cross-lingual dependency parsing with first-order meta-learning."""

__version__ = "0.1.0"
