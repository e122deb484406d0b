"""Zero-shot depression-emotion classification, severity scoring and corpus analytics."""

from .core import (
    EMOTIONS,
    Emotion,
    EmotionLabelSet,
    SeverityLevel,
    WeightTable,
    compute_severity,
    default_weights,
    severity_level,
)

__all__ = [
    "EMOTIONS",
    "Emotion",
    "EmotionLabelSet",
    "SeverityLevel",
    "WeightTable",
    "compute_severity",
    "default_weights",
    "severity_level",
]

__version__ = "0.1.0"
