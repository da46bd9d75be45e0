"""Tweet cleaning and the three token views used to build a Tweet-MLN.

Cleaning runs a fixed sequence of steps (emoji aliasing, hashtag extraction,
contraction expansion, whitespace cleanup, retweet-marker removal, mention
symbol removal, lowercasing) and then splits the result into hashtag tokens,
keyword tokens and the full cleaned text.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError, EmptyAfterCleaning, LengthMismatch, ParseError
from .labels import SENTIMENT_OF, Emotion, Sentiment

HASHTAG_RE = re.compile(r"(?<!\w)#(\w+)")
RETWEET_RE = re.compile(r"^RT(?=[\s:]|$):?\s*")
_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})


@dataclass(frozen=True)
class RawTweet:
    text: str
    label: Emotion

    def __post_init__(self):
        object.__setattr__(self, "label", Emotion.parse(self.label))


@dataclass(frozen=True)
class CleanTweet:
    body: str
    hashtag_tokens: tuple[str, ...]
    keyword_tokens: tuple[str, ...]
    raw_text: str
    label: Emotion

    @property
    def tokens(self) -> tuple[str, ...]:
        """Keyword tokens followed by hashtag tokens."""
        return self.keyword_tokens + self.hashtag_tokens

    def to_json(self) -> dict:
        return {
            "text": self.raw_text,
            "label": self.label.value,
            "body": self.body,
            "hashtag_tokens": list(self.hashtag_tokens),
            "keyword_tokens": list(self.keyword_tokens),
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "CleanTweet":
        try:
            return cls(
                body=record["body"],
                hashtag_tokens=tuple(record["hashtag_tokens"]),
                keyword_tokens=tuple(record["keyword_tokens"]),
                raw_text=record["text"],
                label=Emotion.parse(record["label"]),
            )
        except KeyError as exc:
            raise ParseError(f"clean tweet record missing field {exc}") from None


@dataclass(frozen=True)
class ContractionTable:
    entries: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        lowered = {}
        for form, expansion in self.entries.items():
            key = form.strip().lower().translate(_APOSTROPHES)
            if key in lowered:
                raise DataError(f"duplicate contraction {form!r}")
            lowered[key] = expansion.strip().lower()
        object.__setattr__(self, "entries", lowered)
        keys = sorted(lowered, key=len, reverse=True)
        pattern = None
        if keys:
            alternation = "|".join(re.escape(k) for k in keys)
            pattern = re.compile(rf"(?<![\w'#])({alternation})(?![\w'])", re.IGNORECASE)
        object.__setattr__(self, "_pattern", pattern)

    def expand(self, text: str) -> str:
        text = text.translate(_APOSTROPHES)
        if self._pattern is None:
            return text
        return self._pattern.sub(lambda m: self.entries[m.group(1).lower()], text)


@dataclass(frozen=True)
class EmojiAliasTable:
    entries: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for alias in self.entries.values():
            if not re.fullmatch(r"[A-Za-z0-9]+(?:_[A-Za-z0-9]+)*", alias):
                raise DataError(f"emoji alias {alias!r} must be ASCII words joined by underscores")
        keys = sorted(self.entries, key=len, reverse=True)
        pattern = re.compile("|".join(re.escape(k) for k in keys)) if keys else None
        object.__setattr__(self, "_pattern", pattern)

    def substitute(self, text: str) -> str:
        if self._pattern is None:
            return text
        return self._pattern.sub(lambda m: f" {self.entries[m.group(0)]} ", text)


def read_tsv_table(path: str | Path) -> dict[str, str]:
    """Read a two-column ``form<TAB>value`` file; blank and ``#``-comment lines are skipped."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected two tab-separated columns")
            table[parts[0]] = parts[1]
    return table


def _packaged_table(name: str) -> dict[str, str]:
    with resources.as_file(resources.files("mlta") / "data" / name) as path:
        return read_tsv_table(path)


@lru_cache(maxsize=None)
def default_contractions() -> ContractionTable:
    return ContractionTable(_packaged_table("contractions.tsv"))


@lru_cache(maxsize=None)
def default_emoji() -> EmojiAliasTable:
    return EmojiAliasTable(_packaged_table("emoji.tsv"))


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Split on whitespace and strip leading/trailing punctuation from each token."""
    tokens = []
    for piece in text.split():
        piece = _strip_punct(piece)
        if piece:
            tokens.append(piece)
    return tokens


def split_hashtag(tag: str, vocabulary: "Iterable[str] | None" = None) -> list[str]:
    """Segment a hashtag into known words.

    Longest vocabulary match is tried first at every position, backtracking
    when the remainder cannot be segmented. When no full segmentation exists
    the whole body comes back as a single token.

    >>> split_hashtag("#happybirthday", {"happy", "birthday", "hap"})
    ['happy', 'birthday']
    """
    body = tag[1:] if tag.startswith("#") else tag
    body = body.lower()
    if not body:
        return []
    vocab = vocabulary if isinstance(vocabulary, (set, frozenset, dict)) else set(vocabulary or ())
    if not vocab:
        return [body]
    if body in vocab:
        return [body]
    n = len(body)
    failed: set[int] = set()

    def search(start: int) -> "list[str] | None":
        if start == n:
            return []
        if start in failed:
            return None
        for end in range(n, start, -1):
            piece = body[start:end]
            if piece in vocab:
                rest = search(end)
                if rest is not None:
                    return [piece] + rest
        failed.add(start)
        return None

    result = search(0)
    return result if result else [body]


def clean(
    raw: RawTweet,
    contractions: "ContractionTable | None" = None,
    emoji: "EmojiAliasTable | None" = None,
    vocabulary: "Iterable[str] | None" = None,
) -> CleanTweet:
    """Clean one tweet and return its hashtag, keyword and full-text views.

    ``vocabulary`` drives hashtag segmentation; without it every hashtag body
    stays a single token.

    Raises:
        EmptyAfterCleaning: if no token survives in any view.
    """
    contractions = default_contractions() if contractions is None else contractions
    emoji = default_emoji() if emoji is None else emoji
    if vocabulary is not None and not isinstance(vocabulary, (set, frozenset, dict)):
        vocabulary = set(vocabulary)

    text = raw.text or ""
    text = emoji.substitute(text)
    hashtags = [m.group(1) for m in HASHTAG_RE.finditer(text)]
    text = contractions.expand(text)
    text = " ".join(text.split())
    text = RETWEET_RE.sub("", text)
    text = text.replace("@", "")
    text = " ".join(text.split()).lower()

    hashtag_tokens: list[str] = []
    for tag in hashtags:
        hashtag_tokens.extend(split_hashtag(tag, vocabulary))
    keyword_tokens = tokenize(HASHTAG_RE.sub(" ", text))

    if not hashtag_tokens and not keyword_tokens:
        raise EmptyAfterCleaning(f"no tokens left after cleaning {raw.text!r}")
    return CleanTweet(
        body=" ".join(keyword_tokens),
        hashtag_tokens=tuple(hashtag_tokens),
        keyword_tokens=tuple(keyword_tokens),
        raw_text=text,
        label=raw.label,
    )


def filter_by_sentiment(
    tweets: Sequence[RawTweet], predictions: Sequence["Sentiment | str"]
) -> list[RawTweet]:
    """Keep tweets whose external sentiment prediction agrees with their emotion's polarity.

    Neutral predictions always drop the tweet.
    """
    if len(tweets) != len(predictions):
        raise LengthMismatch(f"{len(tweets)} tweets but {len(predictions)} predictions")
    kept = []
    for tweet, pred in zip(tweets, predictions):
        pred = Sentiment.parse(pred)
        if pred is not Sentiment.NEUTRAL and SENTIMENT_OF[tweet.label] is pred:
            kept.append(tweet)
    return kept


def read_corpus(path: str | Path) -> list[RawTweet]:
    """Read newline-delimited JSON records with ``text`` and ``label`` fields."""
    tweets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                tweets.append(RawTweet(text=record["text"], label=record["label"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: bad corpus record ({exc})") from None
            except DataError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return tweets


def write_corpus(tweets: Iterable[RawTweet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tweet in tweets:
            fh.write(json.dumps({"text": tweet.text, "label": tweet.label.value}, ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> list[Sentiment]:
    """Read one ``positive``/``negative``/``neutral`` prediction per line."""
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                preds.append(Sentiment.parse(line))
            except DataError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return preds


def read_clean(path: str | Path) -> list[CleanTweet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(CleanTweet.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return out


def write_clean(tweets: Iterable[CleanTweet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tweet in tweets:
            fh.write(json.dumps(tweet.to_json(), ensure_ascii=False) + "\n")
