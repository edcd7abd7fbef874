"""Noise-aware engagement analytics for news-domain panels: ideology and
quality weighted metrics, change-point detection and a synthetic panel
generator with planted ground truth."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, GateError, NewsDietError, SchemaError  # noqa: E402

__all__ = ["__version__", "ConfigError", "DataError", "GateError", "NewsDietError", "SchemaError"]
