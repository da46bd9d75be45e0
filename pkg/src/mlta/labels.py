"""Emotion and sentiment label sets."""

from __future__ import annotations

from enum import Enum

from .errors import DataError


class Emotion(str, Enum):
    ANGRY = "Angry"
    BAD = "Bad"
    FEARFUL = "Fearful"
    HAPPY = "Happy"
    SAD = "Sad"
    SURPRISED = "Surprised"

    @property
    def index(self) -> int:
        return EMOTIONS.index(self)

    @classmethod
    def parse(cls, value: "str | Emotion") -> "Emotion":
        if isinstance(value, Emotion):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise DataError(f"unknown emotion label {value!r}; expected one of {[e.value for e in cls]}")

    @classmethod
    def from_index(cls, index: int) -> "Emotion":
        return EMOTIONS[index]


class Sentiment(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NEUTRAL = "neutral"

    @classmethod
    def parse(cls, value: "str | Sentiment") -> "Sentiment":
        if isinstance(value, Sentiment):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if member.value == key:
                return member
        raise DataError(f"unknown sentiment {value!r}; expected positive, negative or neutral")


EMOTIONS: tuple[Emotion, ...] = tuple(Emotion)
NUM_CLASSES = len(EMOTIONS)

# Emotion -> polarity used both for dataset filtering and for the pair baseline.
SENTIMENT_OF: dict[Emotion, Sentiment] = {
    Emotion.ANGRY: Sentiment.NEGATIVE,
    Emotion.BAD: Sentiment.NEGATIVE,
    Emotion.FEARFUL: Sentiment.NEGATIVE,
    Emotion.HAPPY: Sentiment.POSITIVE,
    Emotion.SAD: Sentiment.NEGATIVE,
    Emotion.SURPRISED: Sentiment.POSITIVE,
}


def sentiment_collapse(label: "Emotion | str") -> Sentiment:
    """Map one of the six emotions onto binary polarity."""
    return SENTIMENT_OF[Emotion.parse(label)]
