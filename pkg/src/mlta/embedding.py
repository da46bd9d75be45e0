"""Pretrained word-vector tables and node featurization.

Lookups go to the primary table first, then the fallback table. Tokens found
in neither get a deterministic unit-norm vector seeded from a hash of the
token, so featurization never fails.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionMismatch, ParseError
from .mln import TweetMln


@dataclass(frozen=True)
class EmbeddingTable:
    dimension: int
    vectors: Mapping[str, np.ndarray] = field(repr=False)
    name: str = ""

    def __post_init__(self):
        for tok, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise DimensionMismatch(f"vector for {tok!r} has shape {vec.shape}, expected ({self.dimension},)")

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def scaled(self, factor: float) -> "EmbeddingTable":
        return EmbeddingTable(self.dimension, {k: v * factor for k, v in self.vectors.items()}, self.name)


def _is_header(fields: list[str]) -> bool:
    return len(fields) == 2 and all(f.isdigit() for f in fields)


def load_table(path: str | Path, name: str | None = None) -> EmbeddingTable:
    """Load a whitespace-separated ``token v1 ... vd`` text file.

    An optional ``N d`` header line is detected and skipped. Tokens are
    lowercased; when two lines lowercase to the same token the first wins.

    Raises:
        ParseError: empty file or non-numeric fields.
        DimensionMismatch: ragged rows.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    dim = None
    header_dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.rstrip("\n").split()
            if not fields:
                continue
            if lineno == 1 and _is_header(fields):
                header_dim = int(fields[1])
                continue
            token, values = fields[0].lower(), fields[1:]
            if not values:
                raise ParseError(f"{path}:{lineno}: token {token!r} has no vector")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric vector field") from None
            if dim is None:
                dim = len(vec)
                if header_dim is not None and header_dim != dim:
                    raise DimensionMismatch(f"{path}: header says {header_dim} dims, first row has {dim}")
            elif len(vec) != dim:
                raise DimensionMismatch(f"{path}:{lineno}: {len(vec)} values, expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise ParseError(f"{path}:{lineno}: non-finite vector value")
            vectors.setdefault(token, vec)
    if dim is None:
        raise ParseError(f"{path}: no embedding rows")
    return EmbeddingTable(dim, vectors, name or path.stem)


def write_table(table: EmbeddingTable, path: str | Path, header: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(table)} {table.dimension}\n")
        for tok, vec in table.vectors.items():
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def hashed_vector(token: str, dimension: int) -> np.ndarray:
    """Unit-norm pseudo-embedding seeded by a stable 64-bit hash of ``token``."""
    seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    vec = np.random.default_rng(seed).uniform(-1.0, 1.0, dimension)
    return vec / np.linalg.norm(vec)


def lookup(token: str, primary: EmbeddingTable, fallback: EmbeddingTable | None = None) -> np.ndarray:
    if fallback is not None and fallback.dimension != primary.dimension:
        raise DimensionMismatch(f"primary has {primary.dimension} dims, fallback {fallback.dimension}")
    vec = primary.vectors.get(token)
    if vec is None and fallback is not None:
        vec = fallback.vectors.get(token)
    if vec is None:
        vec = hashed_vector(token, primary.dimension)
    return vec


def vocabulary(*tables: EmbeddingTable | None) -> set[str]:
    vocab: set[str] = set()
    for table in tables:
        if table is not None:
            vocab.update(table.vectors)
    return vocab


def featurize(
    mln: TweetMln, primary: EmbeddingTable, fallback: EmbeddingTable | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build the (|V_i|, F_in) node feature matrix of every layer.

    Layer 1/2 rows are the token's own vector; a layer 3 row is the mean of the
    vectors of the tweet's keyword and hashtag tokens. Sentinel nodes and
    token-less tweets get zeros.
    """
    dim = primary.dimension
    cache: dict[str, np.ndarray] = {}

    def vec(tok: str) -> np.ndarray:
        v = cache.get(tok)
        if v is None:
            v = cache[tok] = lookup(tok, primary, fallback)
        return v

    out = []
    for layer in mln.layers:
        feats = np.zeros((layer.num_nodes, dim))
        if not layer.is_sentinel:
            for i, toks in enumerate(layer.node_tokens):
                if toks:
                    feats[i] = np.mean([vec(t) for t in toks], axis=0)
        out.append(feats)
    return tuple(out)


def random_table(tokens: Iterable[str], dimension: int, seed: int, name: str = "synthetic") -> EmbeddingTable:
    """Seeded Gaussian unit-norm vectors for ``tokens`` in order."""
    rng = np.random.default_rng(seed)
    vectors = {}
    for tok in tokens:
        v = rng.standard_normal(dimension)
        vectors[tok] = v / np.linalg.norm(v)
    return EmbeddingTable(dimension, vectors, name)
