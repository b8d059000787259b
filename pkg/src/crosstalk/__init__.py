"""crosstalk: evaluation toolkit for multi-talker speech translation and diarization."""

__version__ = "0.1.0"
