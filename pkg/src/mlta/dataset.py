"""Featurized MLNs and block-diagonal batch collation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbeddingTable, featurize
from .layers import LayerInput
from .mln import TweetMln


@dataclass(frozen=True)
class EncodedMln:
    """An MLN together with its three node feature matrices."""

    mln: TweetMln
    features: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def label(self) -> int:
        return self.mln.label.index


@dataclass
class Batch:
    layers: tuple[LayerInput, LayerInput, LayerInput]
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


def encode(
    mlns: Sequence[TweetMln], primary: EmbeddingTable, fallback: EmbeddingTable | None = None
) -> list[EncodedMln]:
    return [EncodedMln(m, featurize(m, primary, fallback)) for m in mlns]


def collate(samples: Sequence[EncodedMln]) -> Batch:
    """Stack graphs block-diagonally, one segment id per graph."""
    if not samples:
        raise ValueError("cannot collate an empty batch")
    layers = tuple(
        LayerInput.from_layers([s.mln.layers[i] for s in samples], [s.features[i] for s in samples])
        for i in range(3)
    )
    return Batch(layers, np.array([s.label for s in samples], dtype=np.int64))
