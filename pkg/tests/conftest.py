import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mlta.dataset import EncodedMln
from mlta.labels import Emotion
from mlta.layers import Adjacency
from mlta.preprocess import CleanTweet

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def tweet(hashtags=(), keywords=(), label=Emotion.HAPPY) -> CleanTweet:
    """CleanTweet built directly from its token views, bypassing the cleaner."""
    text = " ".join(list(keywords) + [f"#{h}" for h in hashtags])
    return CleanTweet(
        body=" ".join(keywords),
        hashtag_tokens=tuple(hashtags),
        keyword_tokens=tuple(keywords),
        raw_text=text,
        label=Emotion.parse(label),
    )


def random_adjacency(rng: np.random.Generator, n: int, directed: bool, p: float = 0.3) -> Adjacency:
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and (directed or i < j)]
    edges = [e for e in pairs if rng.random() < p]
    return Adjacency.from_edges(edges, n, directed)


def dense_in_adjacency(adj: Adjacency) -> np.ndarray:
    """A[i, j] = 1 iff there is a message edge j -> i."""
    a = np.zeros((adj.num_nodes, adj.num_nodes))
    for s, d in zip(adj.src, adj.dst):
        a[d, s] = 1.0
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def permute_layer(layer, features, perm):
    """Relabel nodes so that old node ``i`` becomes ``perm[i]``."""
    inv = np.argsort(perm)
    edges = []
    for s, d in layer.edges:
        s, d = int(perm[s]), int(perm[d])
        if not layer.directed and s > d:
            s, d = d, s
        edges.append((s, d))
    new = replace(
        layer,
        node_ids=tuple(layer.node_ids[i] for i in inv),
        node_payloads=tuple(layer.node_payloads[i] for i in inv),
        node_tokens=tuple(layer.node_tokens[i] for i in inv),
        edges=tuple(sorted(edges)),
    )
    return new, features[inv]


def permute_sample(sample, rng):
    layers, feats = [], []
    for layer, f in zip(sample.mln.layers, sample.features):
        new, nf = permute_layer(layer, f, rng.permutation(layer.num_nodes))
        layers.append(new)
        feats.append(nf)
    mln = replace(sample.mln, layer1=layers[0], layer2=layers[1], layer3=layers[2])
    return EncodedMln(mln, tuple(feats))


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda s: s[6:8]):
            terminalreporter.write_line(line)
