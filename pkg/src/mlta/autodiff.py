"""Reverse-mode differentiation over dense float64 matrices.

A :class:`Tape` owns every intermediate :class:`Node` of one forward pass.
Each primitive is a method on the tape that computes its value eagerly and
records a vector-Jacobian rule; :meth:`Tape.backward` replays those rules in
reverse and writes gradients into the :class:`Parameter` objects that were
bound to the tape.

Everything is 2-D: vectors are 1xN or Nx1, scalars are 1x1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NonScalarLoss, ShapeMismatch


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeMismatch("matrix", arr.shape)
    return arr


class Parameter:
    """A trainable matrix with its gradient buffer."""

    def __init__(self, value, name: str = ""):
        self.value = np.array(_as_matrix(value), dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Node:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value: np.ndarray, requires_grad: bool):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Node(shape={self.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Node, b: Node) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeMismatch(op, a.shape, b.shape)


def segment_matrix(segments: np.ndarray, num_segments: int, weights: np.ndarray | None = None) -> sp.csr_matrix:
    """Sparse (num_segments x len(segments)) matrix summing rows into their segment."""
    segments = np.asarray(segments, dtype=np.int64)
    n = len(segments)
    data = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    return sp.csr_matrix((data, (segments, np.arange(n))), shape=(num_segments, n))


class Tape:
    """Records operations of one forward pass for reverse-mode replay."""

    def __init__(self):
        self._records: list[tuple[Node, tuple[Node, ...], Callable]] = []
        self._params: dict[int, tuple[Parameter, Node]] = {}

    def __len__(self) -> int:
        return len(self._records)

    # -- leaves -----------------------------------------------------------

    def constant(self, value) -> Node:
        return Node(_as_matrix(value), False)

    def param(self, p: Parameter) -> Node:
        """Bind a parameter to this tape (one node per parameter)."""
        hit = self._params.get(id(p))
        if hit is not None:
            return hit[1]
        node = Node(p.value, True)
        self._params[id(p)] = (p, node)
        return node

    def _record(self, value: np.ndarray, inputs: tuple[Node, ...], vjp: Callable) -> Node:
        req = any(n.requires_grad for n in inputs)
        out = Node(value, req)
        if req:
            self._records.append((out, inputs, vjp))
        return out

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch("matmul", a.shape, b.shape)
        av, bv = a.value, b.value
        ra, rb = a.requires_grad, b.requires_grad
        return self._record(
            av @ bv, (a, b), lambda g: (g @ bv.T if ra else None, av.T @ g if rb else None)
        )

    def add(self, a: Node, b: Node) -> Node:
        _check_broadcast("add", a, b)
        sa, sb = a.shape, b.shape
        return self._record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Node, b: Node) -> Node:
        _check_broadcast("sub", a, b)
        sa, sb = a.shape, b.shape
        return self._record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        """Elementwise product with row/column broadcasting."""
        _check_broadcast("mul", a, b)
        av, bv = a.value, b.value
        ra, rb = a.requires_grad, b.requires_grad
        return self._record(
            av * bv,
            (a, b),
            lambda g: (
                _unbroadcast(g * bv, av.shape) if ra else None,
                _unbroadcast(g * av, bv.shape) if rb else None,
            ),
        )

    def scalar_mul(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._record(a.value * c, (a,), lambda g: (g * c,))

    def transpose(self, a: Node) -> Node:
        return self._record(a.value.T.copy(), (a,), lambda g: (g.T,))

    def row_concat(self, nodes: Sequence[Node]) -> Node:
        """Stack vertically."""
        nodes = tuple(nodes)
        cols = {n.shape[1] for n in nodes}
        if len(cols) != 1:
            raise ShapeMismatch("row_concat", *(n.shape for n in nodes))
        bounds = np.cumsum([0] + [n.shape[0] for n in nodes])
        return self._record(
            np.vstack([n.value for n in nodes]),
            nodes,
            lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(nodes))),
        )

    def col_concat(self, nodes: Sequence[Node]) -> Node:
        """Stack horizontally."""
        nodes = tuple(nodes)
        rows = {n.shape[0] for n in nodes}
        if len(rows) != 1:
            raise ShapeMismatch("col_concat", *(n.shape for n in nodes))
        bounds = np.cumsum([0] + [n.shape[1] for n in nodes])
        return self._record(
            np.hstack([n.value for n in nodes]),
            nodes,
            lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(nodes))),
        )

    def rows(self, a: Node, start: int, stop: int) -> Node:
        """Row slice ``a[start:stop]``."""
        if not 0 <= start <= stop <= a.shape[0]:
            raise ShapeMismatch("rows", a.shape, (start, stop))
        shape = a.shape

        def vjp(g):
            full = np.zeros(shape)
            full[start:stop] = g
            return (full,)

        return self._record(a.value[start:stop], (a,), vjp)

    def spmm(self, s: sp.spmatrix, a: Node) -> Node:
        """Constant sparse matrix times ``a``."""
        if s.shape[1] != a.shape[0]:
            raise ShapeMismatch("spmm", s.shape, a.shape)
        st = s.T.tocsr()
        return self._record(np.asarray(s @ a.value), (a,), lambda g: (np.asarray(st @ g),))

    def gather_rows(self, a: Node, index: np.ndarray) -> Node:
        index = np.asarray(index, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
            raise ShapeMismatch("gather_rows", a.shape, (int(index.max()),))
        n = a.shape[0]

        def vjp(g):
            return (np.asarray(segment_matrix(index, n) @ g),)

        return self._record(a.value[index], (a,), vjp)

    # -- reductions -------------------------------------------------------

    def sum(self, a: Node) -> Node:
        shape = a.shape
        return self._record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))

    def mean(self, a: Node) -> Node:
        return self.scalar_mul(self.sum(a), 1.0 / a.value.size)

    def pick(self, a: Node, cols: Sequence[int]) -> Node:
        """Column ``cols[r]`` of every row ``r``, as an (R x 1) node."""
        cols = np.asarray(cols, dtype=np.int64)
        if cols.shape != (a.shape[0],):
            raise ShapeMismatch("pick", a.shape, cols.shape)
        r = np.arange(a.shape[0])
        shape = a.shape

        def vjp(g):
            full = np.zeros(shape)
            full[r, cols] = g[:, 0]
            return (full,)

        return self._record(a.value[r, cols][:, None], (a,), vjp)

    def segment_sum(self, a: Node, segments: np.ndarray, num_segments: int) -> Node:
        if len(segments) != a.shape[0]:
            raise ShapeMismatch("segment_sum", a.shape, (len(segments),))
        return self.spmm(segment_matrix(segments, num_segments), a)

    def segment_mean(self, a: Node, segments: np.ndarray, num_segments: int) -> Node:
        """Per-segment row mean; empty segments give zero rows."""
        segments = np.asarray(segments, dtype=np.int64)
        if len(segments) != a.shape[0]:
            raise ShapeMismatch("segment_mean", a.shape, (len(segments),))
        counts = np.bincount(segments, minlength=num_segments).astype(np.float64)
        weights = 1.0 / counts[segments]
        return self.spmm(segment_matrix(segments, num_segments, weights), a)

    def segment_max_abs(self, a: Node, segments: np.ndarray, num_segments: int) -> Node:
        """Per-segment, per-column max of |a|; ties route gradient to the first row."""
        segments = np.asarray(segments, dtype=np.int64)
        if len(segments) != a.shape[0]:
            raise ShapeMismatch("segment_max_abs", a.shape, (len(segments),))
        av = a.value
        absv = np.abs(av)
        out = np.zeros((num_segments, av.shape[1]))
        arg = np.zeros((num_segments, av.shape[1]), dtype=np.int64)
        order = np.argsort(segments, kind="stable")
        seg_sorted = segments[order]
        starts = np.searchsorted(seg_sorted, np.arange(num_segments), side="left")
        ends = np.searchsorted(seg_sorted, np.arange(num_segments), side="right")
        for s in range(num_segments):
            if ends[s] > starts[s]:
                rows = order[starts[s]:ends[s]]
                local = np.argmax(absv[rows], axis=0)
                arg[s] = rows[local]
                out[s] = absv[arg[s], np.arange(av.shape[1])]
        has = ends > starts
        shape = av.shape

        def vjp(g):
            full = np.zeros(shape)
            cols = np.arange(shape[1])
            for s in np.nonzero(has)[0]:
                np.add.at(full, (arg[s], cols), g[s] * np.sign(av[arg[s], cols]))
            return (full,)

        return self._record(out, (a,), vjp)

    # -- elementwise nonlinearities --------------------------------------

    def relu(self, a: Node) -> Node:
        mask = a.value > 0
        return self._record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))

    def leaky_relu(self, a: Node, slope: float = 0.2) -> Node:
        av = a.value
        out = np.maximum(av, slope * av) if 0.0 <= slope <= 1.0 else np.where(av > 0, av, slope * av)
        return self._record(out, (a,), lambda g: (np.where(av > 0, g, slope * g),))

    def exp(self, a: Node) -> Node:
        y = np.exp(a.value)
        return self._record(y, (a,), lambda g: (g * y,))

    def log(self, a: Node) -> Node:
        av = a.value
        return self._record(np.log(av), (a,), lambda g: (g / av,))

    def softmax_rows(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)
        return self._record(y, (a,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))

    def log_softmax_rows(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        y = z - lse
        p = np.exp(y)
        return self._record(y, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))

    def masked_softmax(self, a: Node, mask: np.ndarray) -> Node:
        """Row softmax restricted to ``mask``; masked-out entries are exactly 0.

        Every row needs at least one unmasked entry.
        """
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeMismatch("masked_softmax", a.shape, mask.shape)
        if not mask.any(axis=1).all():
            raise ValueError("masked_softmax: a row has no unmasked entries")
        z = np.where(mask, a.value, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
        y = e / e.sum(axis=1, keepdims=True)
        return self._record(y, (a,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))

    def segment_softmax(self, a: Node, segments: np.ndarray, num_segments: int) -> Node:
        """Softmax of each column over the rows sharing a segment id.

        This is the sparse form of a neighbourhood-masked softmax: rows are
        edges and segments are their target nodes.
        """
        segments = np.asarray(segments, dtype=np.int64)
        if len(segments) != a.shape[0]:
            raise ShapeMismatch("segment_softmax", a.shape, (len(segments),))
        av = a.value
        seg_max = np.full((num_segments, av.shape[1]), -np.inf)
        np.maximum.at(seg_max, segments, av)
        e = np.exp(av - seg_max[segments])
        summ = segment_matrix(segments, num_segments)
        denom = np.asarray(summ @ e)
        y = e / denom[segments]

        def vjp(g):
            dot = np.asarray(summ @ (g * y))
            return (y * (g - dot[segments]),)

        return self._record(y, (a,), vjp)

    def dropout(self, a: Node, rate: float, training: bool, rng: np.random.Generator | None = None) -> Node:
        """Inverted dropout; the identity unless ``training`` is set."""
        if not training or rate <= 0.0:
            return a
        if rate >= 1.0:
            raise ValueError("dropout rate must be < 1")
        if rng is None:
            raise ValueError("training-mode dropout needs a seeded generator")
        keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
        return self._record(a.value * keep, (a,), lambda g: (g * keep,))

    # -- reverse pass -----------------------------------------------------

    def backward(self, loss: Node) -> None:
        """Write d(loss)/d(p) into ``p.grad`` for every parameter bound to this tape.

        Parameters bound but not reached by ``loss`` get zero gradients.
        """
        if loss.value.size != 1:
            raise NonScalarLoss(f"loss must be 1x1, got {loss.shape}")
        for _, node in self._params.values():
            node.grad = None
        for out, _, _ in self._records:
            out.grad = None
        loss.grad = np.ones_like(loss.value)
        for out, inputs, vjp in reversed(self._records):
            if out.grad is None:
                continue
            grads = vjp(out.grad)
            for inp, g in zip(inputs, grads):
                if not inp.requires_grad or g is None:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g
        for p, node in self._params.values():
            p.grad = np.zeros_like(p.value) if node.grad is None else np.array(node.grad, dtype=np.float64)


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst: tuple[str, tuple[int, int]] | None
    checked: int
    tolerance: float
    rel_floor: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    f: Callable[[Tape], Node],
    params: Sequence[Parameter],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    rel_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` with central finite differences.

    ``f`` must build its loss on the tape it is given and be deterministic.
    Relative error per entry is ``|a - n| / max(|a|, |n|, rel_floor)``; the
    floor keeps entries whose true gradient is zero from dividing round-off
    by round-off.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    tape = Tape()
    tape.backward(f(tape))
    analytic = [p.grad.copy() for p in params]

    worst_rel, worst_abs, worst = 0.0, 0.0, None
    per_param = {}
    checked = 0
    for p, ga in zip(params, analytic):
        p_worst = 0.0
        for idx in np.ndindex(*p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + epsilon
            fp = f(Tape()).item()
            p.value[idx] = orig - epsilon
            fm = f(Tape()).item()
            p.value[idx] = orig
            num = (fp - fm) / (2.0 * epsilon)
            a = ga[idx]
            abs_err = abs(a - num)
            rel = abs_err / max(abs(a), abs(num), rel_floor)
            checked += 1
            worst_abs = max(worst_abs, abs_err)
            p_worst = max(p_worst, rel)
            if rel > worst_rel:
                worst_rel, worst = rel, (p.name, idx)
        per_param[p.name] = p_worst
    for p, ga in zip(params, analytic):
        p.grad = ga
    return GradCheckReport(worst_rel, worst_abs, worst, checked, tolerance, rel_floor, per_param)
