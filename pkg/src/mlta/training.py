"""Stratified splitting, mini-batching, Adam and the training loop."""

from __future__ import annotations

import csv
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Parameter, Tape
from .dataset import Batch, EncodedMln, collate
from .errors import NonFiniteGradient, NonFiniteValue, TooFewSamples
from .evaluation import macro_f1, predict
from .layers import ConvKind, ModelDims, ModelParams, cross_entropy, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 32
    dropout: float = 0.5
    seed: int = 0
    conv_kind: ConvKind = ConvKind.GRAPH
    heads: int = 5
    split_fraction: float = 0.8
    dims: ModelDims = ModelDims()
    pooling: str = "mean"
    readout: str = "concat"
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "conv_kind", ConvKind.parse(self.conv_kind))
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly between 0 and 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def split(samples: Sequence, fraction: float = 0.8, seed: int = 0, label=None) -> tuple[list, list]:
    """Stratified seeded split: per class, shuffle then take a ``fraction`` prefix for training.

    ``label`` extracts the class of a sample (defaults to ``.label``).

    Raises:
        TooFewSamples: a class has fewer than two samples.
    """
    if not samples:
        raise TooFewSamples("nothing to split")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    if label is None:
        def label(s):
            return s.label

    by_class: dict = defaultdict(list)
    for i, s in enumerate(samples):
        by_class[label(s)].append(i)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in sorted(by_class, key=str):
        idx = by_class[cls]
        if len(idx) < 2:
            raise TooFewSamples(f"class {cls} has {len(idx)} sample(s); need at least 2")
        order = [idx[j] for j in rng.permutation(len(idx))]
        n_train = min(max(int(round(fraction * len(idx))), 1), len(idx) - 1)
        train_idx.extend(order[:n_train])
        test_idx.extend(order[n_train:])
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


def make_batches(samples: Sequence[EncodedMln], batch_size: int, seed: int, epoch: int) -> list[Batch]:
    """Reshuffle with a generator seeded by (seed, epoch) and collate consecutive chunks."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    return [
        collate([samples[i] for i in order[start:start + batch_size]])
        for start in range(0, len(samples), batch_size)
    ]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update in place, then zero the gradients.

    Raises:
        NonFiniteGradient: before touching any parameter.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in {p.name or 'parameter'}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, p in enumerate(params):
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.value)
            state.v[i] = np.zeros_like(p.value)
        v = state.v[i]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_f1: float
    test_f1: float
    seconds: float


def batch_loss(tape: Tape, batch: Batch, params: ModelParams, training: bool = False, rng=None, weights=None):
    logits = forward(tape, batch.layers, params, training=training, rng=rng)
    return cross_entropy(tape, logits, batch.labels, weights)


def init_params(config: TrainConfig) -> ModelParams:
    return ModelParams.init(
        config.conv_kind, config.dims, config.heads, config.seed, config.dropout, config.pooling, config.readout
    )


def train(
    train_set: Sequence[EncodedMln],
    test_set: Sequence[EncodedMln],
    config: TrainConfig,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Run ``config.epochs`` epochs of Adam and return the best-test-F1 weights and the history.

    History rows carry mean training loss, eval-mode macro F1 on both sets and
    wall-clock seconds per epoch. Ties in test F1 keep the earlier epoch.
    """
    if not train_set or not test_set:
        raise TooFewSamples("train and test sets must both be non-empty")
    params = init_params(config) if params is None else params
    plist = params.parameters()
    state = AdamState()
    best = params.copy()
    best.meta["best_epoch"] = 0
    best_f1 = -1.0
    history: list[EpochRecord] = []
    train_labels = [s.label for s in train_set]
    test_labels = [s.label for s in test_set]

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        total, count = 0.0, 0
        for step, batch in enumerate(make_batches(train_set, config.batch_size, config.seed, epoch)):
            rng = np.random.default_rng([config.seed, epoch, step])
            tape = Tape()
            loss = batch_loss(tape, batch, params, training=True, rng=rng, weights=config.class_weights)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteValue(f"epoch {epoch} step {step}: loss is {value}")
            tape.backward(loss)
            adam_step(plist, state, config.learning_rate)
            total += value * batch.size
            count += batch.size
        train_f1 = macro_f1(train_labels, predict(train_set, params))
        test_f1 = macro_f1(test_labels, predict(test_set, params))
        seconds = time.perf_counter() - start
        history.append(EpochRecord(epoch, total / count, train_f1, test_f1, seconds))
        log.info("epoch %d loss %.4f train_f1 %.4f test_f1 %.4f (%.2fs)", epoch, total / count, train_f1, test_f1, seconds)
        if test_f1 > best_f1:
            best_f1 = test_f1
            best = params.copy()
            best.meta["best_epoch"] = epoch
    if config.epochs > 0:
        best.meta["best_test_f1"] = best_f1
    return best, history


HISTORY_COLUMNS = ("epoch", "train_loss", "train_f1", "test_f1", "seconds")


def write_history(history: Sequence[EpochRecord], path: str | Path, timing: bool = True) -> None:
    """Write the learning history CSV; with ``timing`` off the seconds column is left blank."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for h in history:
            writer.writerow(
                [h.epoch, repr(h.train_loss), repr(h.train_f1), repr(h.test_f1), repr(h.seconds) if timing else ""]
            )


def read_history(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def toy_batch(seed: int = 0, dim: int = 4, graphs: int = 3, group_size: int = 3) -> Batch:
    """A small batch of real MLNs (distinct labels) built from a seeded synthetic corpus."""
    from .embedding import vocabulary
    from .mln import build_mln, group_by_label
    from .preprocess import clean
    from .synthetic import GenConfig, embedding_table, generate

    cfg = GenConfig(
        tweets_per_class=group_size, vocab_per_class=6, shared_vocab=4, hashtag_rate=0.8,
        hashtags_per_class=2, noise_rate=0.0, seed=seed, min_tokens=3, max_tokens=6, embedding_dim=dim,
    )
    table = embedding_table(cfg)
    vocab = vocabulary(table)
    tweets = [clean(t, vocabulary=vocab) for t in generate(cfg)]
    groups, _ = group_by_label(tweets, group_size)
    from .dataset import encode

    return collate(encode([build_mln(g) for g in groups[:graphs]], table))


def model_grad_check(
    kind: "ConvKind | str",
    seed: int = 0,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    heads: int = 5,
    training: bool = True,
    **model_kwargs,
):
    """Finite-difference check of full-model loss gradients on a three-MLN toy batch."""
    from .autodiff import grad_check

    batch = toy_batch(seed)
    dims = ModelDims(f_in=batch.layers[0].features.shape[1], hidden=3, fc1=5, fc2=4)
    params = ModelParams.init(kind, dims, heads=heads, seed=seed, **model_kwargs)
    # zero biases can park a ReLU exactly on its kink, where finite differences are meaningless
    rng = np.random.default_rng([seed, 17])
    for p in params.parameters():
        if p.name.endswith(".bias"):
            p.value = rng.uniform(-0.1, 0.1, p.value.shape)

    def loss_fn(tape: Tape):
        rng = np.random.default_rng([seed, 99])
        return batch_loss(tape, batch, params, training=training, rng=rng)

    return grad_check(loss_fn, params.parameters(), epsilon, tolerance)
