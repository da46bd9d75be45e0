"""Confusion matrices, precision/recall/F1, prediction and comparison reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tape
from .dataset import EncodedMln, collate
from .errors import BadGroupSize, EmptyMatrix, LengthMismatch
from .labels import EMOTIONS, Emotion, Sentiment, sentiment_collapse
from .layers import ConvKind, ModelParams, forward

__all__ = [
    "MetricsReport",
    "confusion_matrix",
    "metrics",
    "macro_f1",
    "predict",
    "predict_logits",
    "sentiment_collapse",
    "pair_baseline",
    "ablation",
]

EMOTION_NAMES = [e.value for e in EMOTIONS]
POLARITY_NAMES = [Sentiment.POSITIVE.value, Sentiment.NEGATIVE.value, Sentiment.NEUTRAL.value]


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int = len(EMOTIONS)) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{len(y_true)} labels but {len(y_pred)} predictions")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


@dataclass
class MetricsReport:
    class_names: list[str]
    confusion: list[list[int]]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    averaged: list[int]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    samples: int
    zero_division: list[str] = field(default_factory=list)
    seconds_per_epoch: float | None = None

    def to_json(self) -> dict:
        return asdict(self)

    def format_table(self) -> str:
        width = max(len(n) for n in self.class_names) + 2
        lines = [f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}"]
        for i in self.averaged:
            lines.append(
                f"{self.class_names[i]:<{width}}{self.precision[i]:>10.4f}{self.recall[i]:>10.4f}"
                f"{self.f1[i]:>10.4f}{self.support[i]:>9d}"
            )
        lines.append(
            f"{'macro':<{width}}{self.macro_precision:>10.4f}{self.macro_recall:>10.4f}"
            f"{self.macro_f1:>10.4f}{self.samples:>9d}"
        )
        if self.zero_division:
            lines.append(f"zero-division (scored 0): {', '.join(self.zero_division)}")
        return "\n".join(lines)


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def metrics(
    cm: np.ndarray,
    class_names: Sequence[str] | None = None,
    average_over: Sequence[int] | None = None,
) -> MetricsReport:
    """One-vs-rest precision, recall and F1 per class plus their unweighted means.

    ``average_over`` restricts which classes enter the macro average (e.g. to
    leave out an abstention column). A zero denominator scores 0 and the class
    is listed in ``zero_division``.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion counts must be nonnegative")
    total = int(cm.sum())
    if total <= 0:
        raise EmptyMatrix("confusion matrix has no samples")
    n = cm.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(n)]
    avg = list(range(n)) if average_over is None else [int(i) for i in average_over]

    precision, recall, f1, zero = [], [], [], []
    for c in range(n):
        tp = float(cm[c, c])
        fp = float(cm[:, c].sum()) - tp
        fn = float(cm[c, :].sum()) - tp
        p, zp = _safe_div(tp, tp + fp)
        r, zr = _safe_div(tp, tp + fn)
        f, zf = _safe_div(2 * p * r, p + r)
        precision.append(p)
        recall.append(r)
        f1.append(f)
        if c in avg and (zp or zr or zf):
            zero.append(names[c])
    return MetricsReport(
        class_names=names,
        confusion=cm.astype(int).tolist(),
        precision=precision,
        recall=recall,
        f1=f1,
        support=[int(s) for s in cm.sum(axis=1)],
        averaged=avg,
        macro_precision=float(np.mean([precision[i] for i in avg])),
        macro_recall=float(np.mean([recall[i] for i in avg])),
        macro_f1=float(np.mean([f1[i] for i in avg])),
        samples=total,
        zero_division=zero,
    )


def macro_f1(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int = len(EMOTIONS)) -> float:
    return metrics(confusion_matrix(y_true, y_pred, num_classes)).macro_f1


def predict_logits(samples: Sequence[EncodedMln], params: ModelParams, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits, one row per sample."""
    rows = []
    for start in range(0, len(samples), batch_size):
        batch = collate(samples[start:start + batch_size])
        rows.append(forward(Tape(), batch.layers, params, training=False).value)
    return np.vstack(rows) if rows else np.zeros((0, params.dims.classes))


def predict(samples: Sequence[EncodedMln], params: ModelParams, batch_size: int = 64) -> list[int]:
    """Arg-max class per sample; ties go to the lowest class index."""
    return [int(i) for i in np.argmax(predict_logits(samples, params, batch_size), axis=1)]


def evaluate(samples: Sequence[EncodedMln], params: ModelParams, batch_size: int = 64) -> MetricsReport:
    preds = predict(samples, params, batch_size)
    cm = confusion_matrix([s.label for s in samples], preds)
    return metrics(cm, EMOTION_NAMES)


# -- pair baseline ---------------------------------------------------------


@dataclass
class BaselineRow:
    model: str
    convolution: str
    report: MetricsReport

    @property
    def f1(self) -> float:
        return self.report.macro_f1


@dataclass
class PairBaselineReport:
    rows: list[BaselineRow]
    pairs: int

    def to_json(self) -> dict:
        return {
            "pairs": self.pairs,
            "rows": [
                {"model": r.model, "convolution": r.convolution, "f1": r.f1, "metrics": r.report.to_json()}
                for r in self.rows
            ],
        }

    def format_table(self) -> str:
        lines = [f"{'Model':<28}{'Convolution':<14}{'F1 Score':>9}"]
        for r in self.rows:
            lines.append(f"{r.model:<28}{r.convolution:<14}{100 * r.f1:>8.1f}%")
        return "\n".join(lines)


_POLARITY_INDEX = {Sentiment.POSITIVE: 0, Sentiment.NEGATIVE: 1, Sentiment.NEUTRAL: 2}


def polarity_report(truth: Sequence[Sentiment], preds: Sequence[Sentiment]) -> MetricsReport:
    """Binary positive/negative scores; neutral predictions count as misses of the true class."""
    y_true = [_POLARITY_INDEX[Sentiment.parse(t)] for t in truth]
    y_pred = [_POLARITY_INDEX[Sentiment.parse(p)] for p in preds]
    return metrics(confusion_matrix(y_true, y_pred, 3), POLARITY_NAMES, average_over=[0, 1])


def pair_baseline(
    pairs: Sequence[EncodedMln],
    params: ModelParams,
    external: Mapping[str, Sequence["Sentiment | str"]] | None = None,
) -> PairBaselineReport:
    """Score the model on two-tweet MLNs after collapsing emotions to polarity.

    ``external`` maps a model name to one polarity prediction per pair, scored
    on the same pairs for side-by-side comparison.
    """
    for s in pairs:
        if s.mln.group_size != 2:
            raise BadGroupSize(f"pair baseline needs 2-tweet MLNs, got group size {s.mln.group_size}")
    truth = [sentiment_collapse(s.mln.label) for s in pairs]
    preds = [sentiment_collapse(Emotion.from_index(i)) for i in predict(pairs, params)]
    rows = []
    for name, ext in (external or {}).items():
        if len(ext) != len(pairs):
            raise LengthMismatch(f"external predictions {name!r}: {len(ext)} lines for {len(pairs)} pairs")
        rows.append(BaselineRow(name, "-", polarity_report(truth, ext)))
    rows.append(BaselineRow("MLTA", params.conv_kind.display, polarity_report(truth, preds)))
    return PairBaselineReport(rows, len(pairs))


# -- ablation ---------------------------------------------------------------


@dataclass
class AblationRow:
    conv_kind: ConvKind
    info: str
    f1: float
    seconds_per_epoch: float
    best_epoch: int
    report: MetricsReport


@dataclass
class AblationReport:
    rows: list[AblationRow]
    observations: list[str]

    def to_json(self) -> dict:
        return {
            "rows": [
                {
                    "convolution": r.conv_kind.display,
                    "information": r.info,
                    "f1": r.f1,
                    "seconds_per_epoch": r.seconds_per_epoch,
                    "best_epoch": r.best_epoch,
                    "metrics": r.report.to_json(),
                }
                for r in self.rows
            ],
            "observations": self.observations,
        }

    def format_table(self) -> str:
        lines = [f"{'Convolution Type':<18}{'Information':<22}{'F1 Test Score':>14}{'s/epoch':>10}"]
        for r in self.rows:
            lines.append(
                f"{r.conv_kind.display:<18}{r.info:<22}{100 * r.f1:>13.1f}%{r.seconds_per_epoch:>10.3f}"
            )
        lines.extend(f"- {o}" for o in self.observations)
        return "\n".join(lines)

    def row(self, kind: "ConvKind | str") -> AblationRow:
        kind = ConvKind.parse(kind)
        return next(r for r in self.rows if r.conv_kind is kind)


def ablation(train_set: Sequence[EncodedMln], test_set: Sequence[EncodedMln], base_config) -> AblationReport:
    """Train every convolution kind on identical data and seeds and tabulate the results."""
    from .training import train

    rows = []
    for kind in ConvKind:
        config = replace(base_config, conv_kind=kind)
        params, history = train(train_set, test_set, config)
        report = evaluate(test_set, params)
        secs = float(np.mean([h.seconds for h in history])) if history else 0.0
        info = f"2 Layers, {config.heads} heads" if kind is ConvKind.GATV2 else "2 Layers"
        best = int(params.meta.get("best_epoch", 0))
        report.seconds_per_epoch = secs
        rows.append(AblationRow(kind, info, report.macro_f1, secs, best, report))

    by_kind = {r.conv_kind: r for r in rows}
    ranking = sorted(rows, key=lambda r: -r.f1)
    observations = ["F1 ordering: " + " > ".join(f"{r.conv_kind.display} ({r.f1:.3f})" for r in ranking)]
    gat, graph = by_kind[ConvKind.GATV2], by_kind[ConvKind.GRAPH]
    if graph.seconds_per_epoch > 0:
        observations.append(
            f"GATv2Conv/GraphConv time per epoch ratio: {gat.seconds_per_epoch / graph.seconds_per_epoch:.2f}x"
        )
    return AblationReport(rows, observations)


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=str)
        fh.write("\n")
