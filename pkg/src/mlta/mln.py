"""Three-layer Tweet-MLN construction.

Layer 1 (undirected) holds hashtag tokens, layer 2 (directed) keyword chains,
layer 3 (undirected) one node per tweet. Layers never share node ids and have
no cross-layer edges.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MixedLabels, ParseError
from .labels import Emotion
from .preprocess import CleanTweet

SENTINEL = "<empty>"
_LAYER_PREFIX = ("L1", "L2", "L3")


@dataclass(frozen=True)
class LayerGraph:
    """One simple graph layer.

    ``node_tokens`` holds the tokens whose embeddings feature each node: the
    node's own token for layers 1 and 2, every token of the tweet for layer 3.
    Undirected edges are stored once with ``src <= dst``.
    """

    node_ids: tuple[str, ...]
    node_payloads: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    directed: bool
    node_tokens: tuple[tuple[str, ...], ...]

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def is_sentinel(self) -> bool:
        return self.node_payloads == (SENTINEL,)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges)

    def to_json(self) -> dict:
        return {
            "directed": self.directed,
            "nodes": list(self.node_payloads),
            "edges": [list(e) for e in self.edges],
            "node_tokens": [list(t) for t in self.node_tokens],
        }

    @classmethod
    def from_json(cls, record: dict, prefix: str) -> "LayerGraph":
        nodes = tuple(record["nodes"])
        n = len(nodes)
        edges = tuple((int(s), int(d)) for s, d in record["edges"])
        for s, d in edges:
            if not (0 <= s < n and 0 <= d < n):
                raise ParseError(f"edge ({s}, {d}) out of range for {n} nodes")
        tokens = record.get("node_tokens")
        if tokens is None:
            tokens = [[] if p == SENTINEL else p.split() for p in nodes]
        return cls(
            node_ids=tuple(f"{prefix}:{i}" if prefix == "L3" else f"{prefix}:{p}" for i, p in enumerate(nodes)),
            node_payloads=nodes,
            edges=edges,
            directed=bool(record["directed"]),
            node_tokens=tuple(tuple(t) for t in tokens),
        )


@dataclass(frozen=True)
class TweetMln:
    layer1: LayerGraph
    layer2: LayerGraph
    layer3: LayerGraph
    label: Emotion
    group_size: int

    @property
    def layers(self) -> tuple[LayerGraph, LayerGraph, LayerGraph]:
        return (self.layer1, self.layer2, self.layer3)

    def to_json(self) -> dict:
        return {
            "label": self.label.value,
            "group_size": self.group_size,
            "layers": [layer.to_json() for layer in self.layers],
        }

    @classmethod
    def from_json(cls, record: dict) -> "TweetMln":
        try:
            layers = record["layers"]
            if len(layers) != 3:
                raise ParseError(f"expected 3 layers, got {len(layers)}")
            l1, l2, l3 = (LayerGraph.from_json(layer, p) for layer, p in zip(layers, _LAYER_PREFIX))
            group_size = int(record.get("group_size", 0)) or (0 if l3.is_sentinel else l3.num_nodes)
            return cls(l1, l2, l3, Emotion.parse(record["label"]), group_size)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad MLN record: {exc}") from None


def _sentinel(prefix: str, directed: bool) -> LayerGraph:
    return LayerGraph((f"{prefix}:{SENTINEL}",), (SENTINEL,), (), directed, ((),))


def _undirected(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def build_layer1(tweets: Sequence[CleanTweet]) -> LayerGraph:
    """Hashtag-token layer.

    Two tokens are joined when they occur in the same tweet, or when they
    occur in two tweets that have at least one hashtag token in common.
    Returns a single sentinel node when the group has no hashtags at all.
    """
    index: dict[str, int] = {}
    for tweet in tweets:
        for tok in tweet.hashtag_tokens:
            index.setdefault(tok, len(index))
    if not index:
        return _sentinel("L1", False)

    tag_sets = [sorted({index[t] for t in tweet.hashtag_tokens}) for tweet in tweets]
    edges: set[tuple[int, int]] = set()
    for ids in tag_sets:
        edges.update(combinations(ids, 2))

    # tweets sharing a token: connect the union of their token sets
    by_token: dict[int, list[int]] = defaultdict(list)
    for t_idx, ids in enumerate(tag_sets):
        for i in ids:
            by_token[i].append(t_idx)
    linked: set[tuple[int, int]] = set()
    for owners in by_token.values():
        linked.update(combinations(owners, 2))
    for a, b in linked:
        for u in tag_sets[a]:
            for v in tag_sets[b]:
                if u != v:
                    edges.add(_undirected(u, v))

    tokens = list(index)
    return LayerGraph(
        node_ids=tuple(f"L1:{t}" for t in tokens),
        node_payloads=tuple(tokens),
        edges=tuple(sorted(edges)),
        directed=False,
        node_tokens=tuple((t,) for t in tokens),
    )


def build_layer2(tweets: Sequence[CleanTweet]) -> LayerGraph:
    """Directed keyword-chain layer; each token points to the next keyword in its tweet."""
    index: dict[str, int] = {}
    edges: set[tuple[int, int]] = set()
    for tweet in tweets:
        prev = None
        for tok in tweet.keyword_tokens:
            cur = index.setdefault(tok, len(index))
            if prev is not None and prev != cur:
                edges.add((prev, cur))
            prev = cur
    if not index:
        return _sentinel("L2", True)
    tokens = list(index)
    return LayerGraph(
        node_ids=tuple(f"L2:{t}" for t in tokens),
        node_payloads=tuple(tokens),
        edges=tuple(sorted(edges)),
        directed=True,
        node_tokens=tuple((t,) for t in tokens),
    )


def build_layer3(tweets: Sequence[CleanTweet]) -> LayerGraph:
    """Whole-tweet layer; tweets are joined when their hashtag-token sets intersect."""
    if not tweets:
        return _sentinel("L3", False)
    by_token: dict[str, list[int]] = defaultdict(list)
    for i, tweet in enumerate(tweets):
        for tok in set(tweet.hashtag_tokens):
            by_token[tok].append(i)
    edges: set[tuple[int, int]] = set()
    for owners in by_token.values():
        edges.update(combinations(owners, 2))
    return LayerGraph(
        node_ids=tuple(f"L3:{i}" for i in range(len(tweets))),
        node_payloads=tuple(t.raw_text for t in tweets),
        edges=tuple(sorted(edges)),
        directed=False,
        node_tokens=tuple(t.tokens for t in tweets),
    )


def build_mln(tweets: Sequence[CleanTweet]) -> TweetMln:
    if not tweets:
        raise MixedLabels("cannot build an MLN from zero tweets")
    labels = {t.label for t in tweets}
    if len(labels) != 1:
        raise MixedLabels(f"tweets carry several labels: {sorted(l.value for l in labels)}")
    return TweetMln(
        layer1=build_layer1(tweets),
        layer2=build_layer2(tweets),
        layer3=build_layer3(tweets),
        label=tweets[0].label,
        group_size=len(tweets),
    )


def group_by_label(
    tweets: Sequence[CleanTweet], group_size: int
) -> tuple[list[list[CleanTweet]], int]:
    """Chunk tweets into same-label groups of ``group_size`` in input order.

    Returns the groups (ordered by label, then by position) and the number of
    leftover tweets that did not fill a final group.
    """
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    per_label: dict[Emotion, list[CleanTweet]] = defaultdict(list)
    for tweet in tweets:
        per_label[tweet.label].append(tweet)
    groups, dropped = [], 0
    for label in Emotion:
        items = per_label.get(label, [])
        full = len(items) // group_size
        for g in range(full):
            groups.append(items[g * group_size:(g + 1) * group_size])
        dropped += len(items) - full * group_size
    return groups, dropped


def write_mlns(mlns: Iterable[TweetMln], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mln in mlns:
            fh.write(json.dumps(mln.to_json(), ensure_ascii=False, separators=(",", ":")) + "\n")


def read_mlns(path: str | Path) -> list[TweetMln]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TweetMln.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return out
