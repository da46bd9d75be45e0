"""Graph convolutions, readout, classifier head and loss.

Model layout: every MLN layer has its own branch (conv -> ReLU -> conv ->
ReLU -> dropout -> global pooling). The three pooled vectors are concatenated
and sent through fc1 -> ReLU -> fc2 -> ReLU -> out, giving six logits.

All convolutions take message edges ``src -> dst``; a node aggregates over its
in-neighbours. Undirected layers contribute both directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import Node, Parameter, Tape
from .errors import ParseError, ShapeMismatch
from .labels import NUM_CLASSES
from .mln import LayerGraph

LEAKY_SLOPE = 0.2


class ConvKind(str, Enum):
    GCN = "gcn"
    GATV2 = "gatv2"
    GRAPH = "graphconv"

    @classmethod
    def parse(cls, value: "str | ConvKind") -> "ConvKind":
        if isinstance(value, ConvKind):
            return value
        key = str(value).strip().lower().replace("conv", "").replace("_", "")
        aliases = {"gcn": cls.GCN, "gatv2": cls.GATV2, "gat": cls.GATV2, "graph": cls.GRAPH}
        if key not in aliases:
            raise ValueError(f"unknown convolution {value!r}; expected gcn, gatv2 or graphconv")
        return aliases[key]

    @property
    def display(self) -> str:
        return {"gcn": "GCNConv", "gatv2": "GATv2Conv", "graphconv": "GraphConv"}[self.value]


class Adjacency:
    """Message edges of one (possibly batched, block-diagonal) graph."""

    def __init__(self, src: np.ndarray, dst: np.ndarray, num_nodes: int):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.num_nodes = int(num_nodes)
        if self.src.shape != self.dst.shape:
            raise ShapeMismatch("adjacency", self.src.shape, self.dst.shape)
        if self.src.size and max(self.src.max(), self.dst.max()) >= self.num_nodes:
            raise ShapeMismatch("adjacency", (self.num_nodes,), (int(max(self.src.max(), self.dst.max())),))

    @classmethod
    def from_edges(cls, edges: Sequence[tuple[int, int]], num_nodes: int, directed: bool) -> "Adjacency":
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        src, dst = e[:, 0], e[:, 1]
        if not directed:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        return cls(src, dst, num_nodes)

    @cached_property
    def in_matrix(self) -> sp.csr_matrix:
        """``M[i, j] = 1`` iff there is an edge ``j -> i`` (i.e. the transposed adjacency)."""
        n = self.num_nodes
        data = np.ones(len(self.src))
        m = sp.csr_matrix((data, (self.dst, self.src)), shape=(n, n))
        m.sum_duplicates()
        m.data[:] = 1.0
        return m

    @cached_property
    def gcn_matrix(self) -> sp.csr_matrix:
        """Symmetrically normalised in-adjacency with self-loops."""
        a_hat = (self.in_matrix + sp.identity(self.num_nodes, format="csr")).tocsr()
        deg = np.asarray(a_hat.sum(axis=1)).ravel()
        d = sp.diags(1.0 / np.sqrt(deg))
        return (d @ a_hat @ d).tocsr()

    @cached_property
    def with_self_loops(self) -> tuple[np.ndarray, np.ndarray]:
        loops = np.arange(self.num_nodes)
        return np.concatenate([self.src, loops]), np.concatenate([self.dst, loops])


@dataclass
class LayerInput:
    """Features and structure of one MLN layer for a batch of graphs."""

    features: np.ndarray
    adjacency: Adjacency
    segments: np.ndarray
    num_graphs: int

    @classmethod
    def from_layers(cls, layers: Sequence[LayerGraph], features: Sequence[np.ndarray]) -> "LayerInput":
        srcs, dsts, segs = [], [], []
        offset = 0
        for g, (layer, feats) in enumerate(zip(layers, features)):
            if feats.shape[0] != layer.num_nodes:
                raise ShapeMismatch("layer features", feats.shape, (layer.num_nodes,))
            adj = Adjacency.from_edges(layer.edges, layer.num_nodes, layer.directed)
            srcs.append(adj.src + offset)
            dsts.append(adj.dst + offset)
            segs.append(np.full(layer.num_nodes, g, dtype=np.int64))
            offset += layer.num_nodes
        return cls(
            features=np.vstack(features),
            adjacency=Adjacency(np.concatenate(srcs), np.concatenate(dsts), offset),
            segments=np.concatenate(segs),
            num_graphs=len(layers),
        )


@dataclass(frozen=True)
class ModelDims:
    f_in: int = 300
    hidden: int = 128
    fc1: int = 128
    fc2: int = 64
    classes: int = NUM_CLASSES


@dataclass
class GcnWeights:
    theta: Parameter


@dataclass
class GatV2Weights:
    thetas: list[Parameter]
    atts: list[Parameter]

    @property
    def heads(self) -> int:
        return len(self.thetas)


@dataclass
class GraphConvWeights:
    w1: Parameter
    w2: Parameter


@dataclass
class Linear:
    weight: Parameter
    bias: Parameter


# -- convolution operators ------------------------------------------------


def gcn_forward(tape: Tape, adj: Adjacency, x: Node, theta: Node) -> Node:
    """``D^-1/2 (A + I) D^-1/2 X Theta`` with degrees taken as row sums."""
    if x.shape[0] != adj.num_nodes or x.shape[1] != theta.shape[0]:
        raise ShapeMismatch("gcn", x.shape, theta.shape, (adj.num_nodes,))
    return tape.spmm(adj.gcn_matrix, tape.matmul(x, theta))


def gatv2_attention(tape: Tape, adj: Adjacency, x: Node, weights: GatV2Weights) -> tuple[Node, Node]:
    """Multi-head GATv2; returns (node output, per-edge attention).

    For head ``h`` the score of edge ``j -> i`` is
    ``a_h . LeakyReLU(Theta_h [x_i || x_j])`` over ``j`` in the in-neighbours of
    ``i`` plus ``i`` itself, softmax-normalised per target node. The message
    from ``j`` is the right half of ``Theta_h`` applied to ``x_j``. Heads are
    concatenated, so the output has width ``heads * F_out``; attention has one
    column per head and rows in ``adj.with_self_loops`` order.
    """
    f_in = x.shape[1]
    heads = weights.heads
    f_out = weights.thetas[0].shape[1]
    for th, a in zip(weights.thetas, weights.atts):
        if th.shape != (2 * f_in, f_out) or a.shape != (f_out, 1):
            raise ShapeMismatch("gatv2", x.shape, th.shape, a.shape)
    if x.shape[0] != adj.num_nodes:
        raise ShapeMismatch("gatv2", x.shape, (adj.num_nodes,))
    src, dst = adj.with_self_loops
    n = adj.num_nodes
    thetas = [tape.param(th) for th in weights.thetas]
    atts = [tape.param(a) for a in weights.atts]
    if heads == 1:
        left, right, att_col = tape.rows(thetas[0], 0, f_in), tape.rows(thetas[0], f_in, 2 * f_in), atts[0]
    else:
        left = tape.col_concat([tape.rows(th, 0, f_in) for th in thetas])
        right = tape.col_concat([tape.rows(th, f_in, 2 * f_in) for th in thetas])
        att_col = tape.row_concat(atts)
    # block indicator: column block h of the concatenated width belongs to head h
    blocks = tape.constant(np.kron(np.eye(heads), np.ones((f_out, 1))))
    x_right = tape.matmul(x, right)
    msg = tape.gather_rows(x_right, src)
    pre = tape.add(tape.gather_rows(tape.matmul(x, left), dst), msg)
    scores = tape.matmul(tape.leaky_relu(pre, LEAKY_SLOPE), tape.mul(blocks, att_col))
    alpha = tape.segment_softmax(scores, dst, n)
    weighted = tape.mul(msg, tape.matmul(alpha, tape.transpose(blocks)))
    return tape.segment_sum(weighted, dst, n), alpha


def gatv2_forward(tape: Tape, adj: Adjacency, x: Node, weights: GatV2Weights) -> Node:
    return gatv2_attention(tape, adj, x, weights)[0]


def graphconv_forward(tape: Tape, adj: Adjacency, x: Node, w1: Node, w2: Node) -> Node:
    """``x_i W1 + (sum over in-neighbours j of x_j) W2`` with unit edge weights."""
    if x.shape[0] != adj.num_nodes or w1.shape != w2.shape or x.shape[1] != w1.shape[0]:
        raise ShapeMismatch("graphconv", x.shape, w1.shape, w2.shape)
    return tape.add(tape.matmul(x, w1), tape.spmm(adj.in_matrix, tape.matmul(x, w2)))


def conv_forward(tape: Tape, kind: ConvKind, adj: Adjacency, x: Node, weights) -> Node:
    if kind is ConvKind.GCN:
        return gcn_forward(tape, adj, x, tape.param(weights.theta))
    if kind is ConvKind.GATV2:
        return gatv2_forward(tape, adj, x, weights)
    return graphconv_forward(tape, adj, x, tape.param(weights.w1), tape.param(weights.w2))


# -- model parameters -----------------------------------------------------


def _glorot(rng: np.random.Generator, rows: int, cols: int, name: str) -> Parameter:
    bound = np.sqrt(6.0 / (rows + cols))
    return Parameter(rng.uniform(-bound, bound, (rows, cols)), name)


@dataclass
class ModelParams:
    """All trainable weights plus the metadata needed to rebuild the model."""

    conv_kind: ConvKind
    heads: int
    dims: ModelDims
    seed: int
    branches: list[tuple[object, object]]
    fc1: Linear
    fc2: Linear
    out: Linear
    dropout: float = 0.5
    pooling: str = "mean"
    readout: str = "concat"
    meta: dict = field(default_factory=dict)

    @property
    def branch_width(self) -> int:
        return self.dims.hidden * (self.heads if self.conv_kind is ConvKind.GATV2 else 1)

    @classmethod
    def init(
        cls,
        conv_kind: "ConvKind | str",
        dims: ModelDims = ModelDims(),
        heads: int = 5,
        seed: int = 0,
        dropout: float = 0.5,
        pooling: str = "mean",
        readout: str = "concat",
    ) -> "ModelParams":
        kind = ConvKind.parse(conv_kind)
        if heads < 1:
            raise ValueError("heads must be >= 1")
        if pooling not in ("mean", "maxabs"):
            raise ValueError(f"unknown pooling {pooling!r}")
        if readout not in ("concat", "sum"):
            raise ValueError(f"unknown readout {readout!r}")
        if kind is not ConvKind.GATV2:
            heads = 1
        rng = np.random.default_rng(seed)
        h = dims.hidden
        branches = []
        for layer in (1, 2, 3):
            convs = []
            for c, f_in in ((1, dims.f_in), (2, h * heads if kind is ConvKind.GATV2 else h)):
                name = f"l{layer}.conv{c}"
                if kind is ConvKind.GCN:
                    convs.append(GcnWeights(_glorot(rng, f_in, h, f"{name}.theta")))
                elif kind is ConvKind.GATV2:
                    thetas, atts = [], []
                    for k in range(heads):
                        thetas.append(_glorot(rng, 2 * f_in, h, f"{name}.h{k}.theta"))
                        atts.append(_glorot(rng, h, 1, f"{name}.h{k}.att"))
                    convs.append(GatV2Weights(thetas, atts))
                else:
                    convs.append(
                        GraphConvWeights(_glorot(rng, f_in, h, f"{name}.w1"), _glorot(rng, f_in, h, f"{name}.w2"))
                    )
            branches.append(tuple(convs))
        width = h * heads
        head_in = 3 * width if readout == "concat" else width

        def linear(n_in: int, n_out: int, name: str) -> Linear:
            return Linear(_glorot(rng, n_in, n_out, f"{name}.weight"), Parameter(np.zeros((1, n_out)), f"{name}.bias"))

        return cls(
            conv_kind=kind,
            heads=heads,
            dims=dims,
            seed=seed,
            branches=branches,
            fc1=linear(head_in, dims.fc1, "fc1"),
            fc2=linear(dims.fc1, dims.fc2, "fc2"),
            out=linear(dims.fc2, dims.classes, "out"),
            dropout=dropout,
            pooling=pooling,
            readout=readout,
        )

    def parameters(self) -> list[Parameter]:
        """Every parameter in a fixed order."""
        out = []
        for convs in self.branches:
            for w in convs:
                if isinstance(w, GcnWeights):
                    out.append(w.theta)
                elif isinstance(w, GatV2Weights):
                    for th, a in zip(w.thetas, w.atts):
                        out.extend((th, a))
                else:
                    out.extend((w.w1, w.w2))
        for lin in (self.fc1, self.fc2, self.out):
            out.extend((lin.weight, lin.bias))
        return out

    def named(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def copy(self) -> "ModelParams":
        clone = ModelParams.init(
            self.conv_kind, self.dims, self.heads, self.seed, self.dropout, self.pooling, self.readout
        )
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst.value = src.value.copy()
        clone.meta = dict(self.meta)
        return clone

    def with_dropout(self, rate: float) -> "ModelParams":
        return replace(self, dropout=rate)

    # -- checkpoint format ---------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": "mlta-checkpoint",
            "version": 1,
            "conv_kind": self.conv_kind.value,
            "heads": self.heads,
            "dims": {
                "f_in": self.dims.f_in,
                "hidden": self.dims.hidden,
                "fc1": self.dims.fc1,
                "fc2": self.dims.fc2,
                "classes": self.dims.classes,
            },
            "seed": self.seed,
            "dropout": self.dropout,
            "pooling": self.pooling,
            "readout": self.readout,
            "meta": self.meta,
            "params": {p.name: p.value.tolist() for p in self.parameters()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelParams":
        try:
            model = cls.init(
                doc["conv_kind"],
                ModelDims(**doc["dims"]),
                int(doc["heads"]),
                int(doc["seed"]),
                float(doc.get("dropout", 0.5)),
                doc.get("pooling", "mean"),
                doc.get("readout", "concat"),
            )
            stored = doc["params"]
            for p in model.parameters():
                value = np.array(stored[p.name], dtype=np.float64)
                if value.shape != p.value.shape:
                    raise ParseError(f"parameter {p.name} has shape {value.shape}, expected {p.value.shape}")
                p.value = value
                p.zero_grad()
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad checkpoint: {exc}") from None
        model.meta = dict(doc.get("meta", {}))
        return model

    def save(self, path: str | Path) -> None:
        # float repr is the shortest string that round-trips, so reloads are bit-exact
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: {exc}") from None
        return cls.from_json(doc)


# -- forward path ---------------------------------------------------------


def pool(tape: Tape, h: Node, segments: np.ndarray, num_graphs: int, mode: str = "mean") -> Node:
    if mode == "maxabs":
        return tape.segment_max_abs(h, segments, num_graphs)
    return tape.segment_mean(h, segments, num_graphs)


def layer_branch(
    tape: Tape,
    layer: LayerInput,
    convs: tuple,
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """conv -> ReLU -> conv -> ReLU -> dropout -> pooling, one row per graph."""
    h = tape.constant(layer.features)
    for w in convs:
        h = tape.relu(conv_forward(tape, params.conv_kind, layer.adjacency, h, w))
    h = tape.dropout(h, params.dropout, training, rng)
    return pool(tape, h, layer.segments, layer.num_graphs, params.pooling)


def _dense(tape: Tape, x: Node, lin: Linear) -> Node:
    return tape.add(tape.matmul(x, tape.param(lin.weight)), tape.param(lin.bias))


def forward(
    tape: Tape,
    layers: Sequence[LayerInput],
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Logits (num_graphs x classes) for a batch given its three layer inputs."""
    if len(layers) != 3:
        raise ShapeMismatch("forward", (len(layers),), (3,))
    pooled = [layer_branch(tape, li, convs, params, training, rng) for li, convs in zip(layers, params.branches)]
    if params.readout == "sum":
        r = tape.add(tape.add(pooled[0], pooled[1]), pooled[2])
    else:
        r = tape.col_concat(pooled)
    h = tape.relu(_dense(tape, r, params.fc1))
    h = tape.relu(_dense(tape, h, params.fc2))
    return _dense(tape, h, params.out)


def cross_entropy(
    tape: Tape, logits: Node, labels: Sequence[int], weights: Sequence[float] | None = None
) -> Node:
    """Mean over the batch of ``-w[y] * log softmax(logits)[y]``."""
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise ShapeMismatch("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls})")
    picked = tape.pick(tape.log_softmax_rows(logits), labels)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape != (n_cls,):
            raise ShapeMismatch("cross_entropy weights", w.shape, (n_cls,))
        picked = tape.mul(picked, tape.constant(w[labels][:, None]))
    return tape.scalar_mul(tape.sum(picked), -1.0 / logits.shape[0])
