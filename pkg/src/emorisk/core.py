"""Emotion vocabulary, the weighted severity index and its clinical bands."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping


class Emotion(str, Enum):
    ANGER = "anger"
    COGNITIVE_DYSFUNCTION = "cognitive_dysfunction"
    EMPTINESS = "emptiness"
    HOPELESSNESS = "hopelessness"
    LONELINESS = "loneliness"
    SADNESS = "sadness"
    SUICIDE_INTENT = "suicide_intent"
    WORTHLESSNESS = "worthlessness"

    def __str__(self) -> str:
        return self.value


# Canonical (serialization) order.
EMOTIONS: tuple[Emotion, ...] = tuple(Emotion)
EMOTION_NAMES: tuple[str, ...] = tuple(e.value for e in EMOTIONS)


@dataclass(frozen=True)
class EmotionLabelSet:
    """Presence flags for all eight emotions, stored in canonical order."""

    flags: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.flags) != len(EMOTIONS):
            raise ValueError(f"expected {len(EMOTIONS)} flags, got {len(self.flags)}")
        if not all(isinstance(f, bool) for f in self.flags):
            raise TypeError("label flags must be bool")

    @classmethod
    def from_mapping(cls, presence: Mapping[Emotion | str, bool]) -> "EmotionLabelSet":
        resolved = {Emotion(k): v for k, v in presence.items()}
        missing = [e.value for e in EMOTIONS if e not in resolved]
        if missing:
            raise ValueError(f"missing emotions: {', '.join(missing)}")
        return cls(tuple(bool(resolved[e]) for e in EMOTIONS))

    @classmethod
    def from_present(cls, present: Iterable[Emotion | str]) -> "EmotionLabelSet":
        chosen = {Emotion(p) for p in present}
        return cls(tuple(e in chosen for e in EMOTIONS))

    @classmethod
    def none(cls) -> "EmotionLabelSet":
        return cls((False,) * len(EMOTIONS))

    @classmethod
    def all(cls) -> "EmotionLabelSet":
        return cls((True,) * len(EMOTIONS))

    @classmethod
    def from_bits(cls, bits: int) -> "EmotionLabelSet":
        """Bit i (LSB first) sets the i-th emotion in canonical order."""
        return cls(tuple(bool(bits >> i & 1) for i in range(len(EMOTIONS))))

    def __getitem__(self, emotion: Emotion | str) -> bool:
        return self.flags[EMOTIONS.index(Emotion(emotion))]

    def __iter__(self) -> Iterator[tuple[Emotion, bool]]:
        return iter(zip(EMOTIONS, self.flags))

    def present(self) -> list[Emotion]:
        return [e for e, f in self if f]

    def with_flag(self, emotion: Emotion | str, value: bool) -> "EmotionLabelSet":
        flags = list(self.flags)
        flags[EMOTIONS.index(Emotion(emotion))] = value
        return EmotionLabelSet(tuple(flags))

    def to_dict(self) -> dict[str, bool]:
        return {e.value: f for e, f in self}


@dataclass(frozen=True)
class WeightTable:
    weights: Mapping[Emotion, int]

    def __post_init__(self) -> None:
        resolved = {Emotion(k): v for k, v in self.weights.items()}
        if set(resolved) != set(EMOTIONS):
            raise ValueError("weight table must cover exactly the eight emotions")
        for e, w in resolved.items():
            if isinstance(w, bool) or not isinstance(w, int) or w < 0:
                raise ValueError(f"weight for {e.value} must be a non-negative int, got {w!r}")
        ordered = {e: resolved[e] for e in EMOTIONS}
        object.__setattr__(self, "weights", MappingProxyType(ordered))

    def __getitem__(self, emotion: Emotion | str) -> int:
        return self.weights[Emotion(emotion)]

    def __hash__(self) -> int:
        return hash(tuple(self.weights.items()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightTable):
            return NotImplemented
        return dict(self.weights) == dict(other.weights)

    @property
    def maximum(self) -> int:
        return sum(self.weights.values())


_DEFAULT_WEIGHTS = {
    Emotion.ANGER: 1,
    Emotion.COGNITIVE_DYSFUNCTION: 1,
    Emotion.EMPTINESS: 1,
    Emotion.HOPELESSNESS: 2,
    Emotion.LONELINESS: 1,
    Emotion.SADNESS: 1,
    Emotion.SUICIDE_INTENT: 3,
    Emotion.WORTHLESSNESS: 2,
}


def default_weights() -> WeightTable:
    """Clinical weights: suicide intent 3, hopelessness and worthlessness 2, the rest 1."""
    return WeightTable(dict(_DEFAULT_WEIGHTS))


def compute_severity(labels: EmotionLabelSet, weights: WeightTable | None = None) -> int:
    """Weighted count of the emotions present in ``labels``."""
    table = weights if weights is not None else default_weights()
    return sum(table[e] for e, present in labels if present)


class SeverityLevel(str, Enum):
    MINIMAL = "Minimal"
    MILD = "Mild"
    MODERATE = "Moderate"
    SEVERE = "Severe"


def severity_level(score: int) -> SeverityLevel:
    """Map a severity score onto its band (0-1, 2-4, 5-6, 7+)."""
    if score < 0:
        raise ValueError(f"severity score must be non-negative, got {score}")
    if score <= 1:
        return SeverityLevel.MINIMAL
    if score <= 4:
        return SeverityLevel.MILD
    if score <= 6:
        return SeverityLevel.MODERATE
    return SeverityLevel.SEVERE


_ALIASES = {"cog_dysfunction": Emotion.COGNITIVE_DYSFUNCTION.value}


def normalize_key(name: str) -> str:
    """Lowercase, trim, and fold spaces/hyphens to underscores; resolve known aliases."""
    key = "_".join(name.strip().lower().replace("-", " ").split())
    return _ALIASES.get(key, key)


def emotion_from_name(name: str) -> Emotion | None:
    try:
        return Emotion(normalize_key(name))
    except ValueError:
        return None
