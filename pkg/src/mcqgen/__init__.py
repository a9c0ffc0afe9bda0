"""Multiple-choice question generation from extractive QA data."""

__version__ = "0.1.0"
