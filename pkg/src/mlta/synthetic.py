"""Seeded synthetic tweet corpora with tunable class separability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingTable, random_table
from .labels import EMOTIONS
from .preprocess import RawTweet

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "tr", "pl"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]


@dataclass(frozen=True)
class GenConfig:
    """Corpus shape.

    ``noise_rate`` is the probability that a class-drawn token (or hashtag)
    comes from a uniformly chosen class instead of the tweet's own class, so
    1.0 mixes all classes completely.
    """

    classes: int = 6
    tweets_per_class: int = 600
    vocab_per_class: int = 40
    shared_vocab: int = 60
    hashtag_rate: float = 0.5
    noise_rate: float = 0.1
    seed: int = 0
    shared_rate: float = 0.3
    hashtags_per_class: int = 8
    min_tokens: int = 5
    max_tokens: int = 20
    embedding_dim: int = 300

    def __post_init__(self):
        if self.classes != len(EMOTIONS):
            raise ValueError(f"classes must be {len(EMOTIONS)}")
        for name in ("hashtag_rate", "noise_rate", "shared_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("tweets_per_class", "vocab_per_class", "shared_vocab", "hashtags_per_class", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")


@dataclass(frozen=True)
class Vocabulary:
    class_words: tuple[tuple[str, ...], ...]
    shared_words: tuple[str, ...]
    hashtags: tuple[tuple[str, ...], ...]

    @property
    def all_words(self) -> list[str]:
        words = [w for ws in self.class_words for w in ws]
        return words + list(self.shared_words)


def _pseudo_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        n_syll = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syll))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def build_vocabulary(config: GenConfig) -> Vocabulary:
    rng = np.random.default_rng([config.seed, 1])
    taken: set[str] = set()
    class_words = tuple(tuple(_pseudo_words(rng, config.vocab_per_class, taken)) for _ in range(config.classes))
    shared = tuple(_pseudo_words(rng, config.shared_vocab, taken))
    hashtags = []
    for words in class_words:
        tags = []
        for _ in range(config.hashtags_per_class):
            k = int(rng.integers(1, 3))
            tags.append("#" + "".join(words[int(i)] for i in rng.choice(len(words), size=k, replace=False)))
        hashtags.append(tuple(tags))
    return Vocabulary(class_words, shared, tuple(hashtags))


def generate(config: GenConfig) -> list[RawTweet]:
    """Balanced corpus, ``tweets_per_class`` tweets for each emotion in label order."""
    vocab = build_vocabulary(config)
    rng = np.random.default_rng([config.seed, 2])

    def source_class(c: int) -> int:
        if config.noise_rate > 0 and rng.random() < config.noise_rate:
            return int(rng.integers(config.classes))
        return c

    tweets = []
    for c, label in enumerate(EMOTIONS):
        for _ in range(config.tweets_per_class):
            length = int(rng.integers(config.min_tokens, config.max_tokens + 1))
            tokens = []
            for _ in range(length):
                if rng.random() < config.shared_rate:
                    tokens.append(vocab.shared_words[rng.integers(len(vocab.shared_words))])
                else:
                    words = vocab.class_words[source_class(c)]
                    tokens.append(words[rng.integers(len(words))])
            if rng.random() < config.hashtag_rate:
                for _ in range(int(rng.integers(1, 3))):
                    tags = vocab.hashtags[source_class(c)]
                    tokens.insert(int(rng.integers(len(tokens) + 1)), tags[rng.integers(len(tags))])
            tweets.append(RawTweet(" ".join(tokens), label))
    return tweets


def embedding_table(config: GenConfig) -> EmbeddingTable:
    """One seeded unit vector per vocabulary word, so the pipeline runs without external files."""
    return random_table(build_vocabulary(config).all_words, config.embedding_dim, config.seed + 7919, "synthetic")
