"""Scoring LLM answer-probability logs against an MCQ dataset.

Metrics per (model, quantization) run:

* hard accuracy: share of questions whose correct choice is the unique argmax
* soft accuracy: mean probability on the correct choice
* confidence: 1 - entropy(probs) / log(c), averaged into mean confidence
* correlation: Pearson r between per-question confidence and correct-choice
  probability

Reported numbers are scaled by 100 and shown to one decimal.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import ContentLabel, QType, iter_json_lines
from .errors import (EmptyInputError, MalformedLineError, ProbSumViolation, SingletonError,
                     UnknownItemError)

PROB_TOL = 1e-6
UNDEFINED_MARK = "—"


@dataclass(frozen=True)
class EvalRecord:
    item_id: str
    model_id: str
    probs: tuple
    correct_index: int
    quantization: str = ""

    def __post_init__(self):
        if len(self.probs) < 2:
            raise ProbSumViolation(f"{self.item_id}: need at least two choices", id=self.item_id)
        if any(not (0.0 <= p <= 1.0) or not math.isfinite(p) for p in self.probs):
            raise ProbSumViolation(f"{self.item_id}: probabilities outside [0, 1]", id=self.item_id)
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ProbSumViolation(f"{self.item_id}: probabilities sum to {total!r}", id=self.item_id)
        if not 0 <= self.correct_index < len(self.probs):
            raise ProbSumViolation(f"{self.item_id}: correct_index out of range", id=self.item_id)


def softmax(logits: Sequence[float]) -> list[float]:
    x = np.asarray(logits, dtype=float)
    x = x - np.max(x)
    e = np.exp(x)
    return (e / e.sum()).tolist()


def ingest_logs(path) -> Iterator[EvalRecord]:
    """Stream records from a JSON-lines eval log.

    Each line carries either ``probs`` or ``loglikelihoods``; the latter
    are turned into probabilities with a softmax.
    """
    for line_no, raw in iter_json_lines(path):
        try:
            item_id = str(raw["item_id"])
            model_id = str(raw["model_id"])
            correct = raw["correct_index"]
        except KeyError as exc:
            raise MalformedLineError(line_no, f"missing field {exc}") from None
        if isinstance(correct, bool) or not isinstance(correct, int):
            raise MalformedLineError(line_no, "correct_index must be an integer")
        if "probs" in raw and raw["probs"] is not None:
            values = raw["probs"]
            convert = False
        elif "loglikelihoods" in raw and raw["loglikelihoods"] is not None:
            values = raw["loglikelihoods"]
            convert = True
        else:
            raise MalformedLineError(line_no, "need 'probs' or 'loglikelihoods'")
        if not isinstance(values, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            raise MalformedLineError(line_no, "choice values must be a list of numbers")
        probs = softmax(values) if convert else [float(v) for v in values]
        yield EvalRecord(item_id, model_id, tuple(probs), correct, str(raw.get("quantization") or ""))


def _require(records, minimum: int = 1):
    records = list(records)
    if len(records) < minimum:
        if minimum > 1:
            raise SingletonError(f"need at least {minimum} records, got {len(records)}")
        raise EmptyInputError("no records")
    return records


def is_hard_correct(rec: EvalRecord) -> bool:
    """Correct choice is the strict maximum; ties count as wrong."""
    p = rec.probs
    top = p[rec.correct_index]
    return all(top > q for i, q in enumerate(p) if i != rec.correct_index)


def hard_accuracy(records: Iterable[EvalRecord]) -> float:
    records = _require(records)
    return sum(is_hard_correct(r) for r in records) / len(records)


def soft_accuracy(records: Iterable[EvalRecord]) -> float:
    records = _require(records)
    return math.fsum(r.probs[r.correct_index] for r in records) / len(records)


def confidence(probs: Sequence[float]) -> float:
    """1 - normalized entropy, with 0 log 0 = 0; clamped to [0, 1]."""
    c = len(probs)
    if c < 2:
        raise ValueError("confidence needs at least two choices")
    h = -math.fsum(p * math.log(p) for p in probs if p > 0)
    return min(1.0, max(0.0, 1.0 - h / math.log(c)))


def mean_confidence(records: Iterable[EvalRecord]) -> float:
    records = _require(records)
    return math.fsum(confidence(r.probs) for r in records) / len(records)


def confidence_soft_correlation(records: Iterable[EvalRecord]) -> Optional[float]:
    """Pearson r of (confidence, correct-choice probability); None when either is constant."""
    records = _require(records, 2)
    x = np.array([confidence(r.probs) for r in records])
    y = np.array([r.probs[r.correct_index] for r in records])
    if x.max() == x.min() or y.max() == y.min():
        return None
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0:
        return None
    return float(np.clip(float(xc @ yc) / denom, -1.0, 1.0))


class CorrelationAccumulator:
    """Streaming Pearson correlation whose partial states merge exactly.

    Lets partitions of a large log be scored in parallel and combined.
    """

    def __init__(self):
        self.n = 0
        self.mean_x = 0.0
        self.mean_y = 0.0
        self.m2x = 0.0
        self.m2y = 0.0
        self.cxy = 0.0

    def add(self, x: float, y: float) -> None:
        self.n += 1
        dx = x - self.mean_x
        self.mean_x += dx / self.n
        dy = y - self.mean_y
        self.mean_y += dy / self.n
        self.m2x += dx * (x - self.mean_x)
        self.m2y += dy * (y - self.mean_y)
        self.cxy += dx * (y - self.mean_y)

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        out = CorrelationAccumulator()
        n = self.n + other.n
        if n == 0:
            return out
        dx = other.mean_x - self.mean_x
        dy = other.mean_y - self.mean_y
        w = self.n * other.n / n
        out.n = n
        out.mean_x = self.mean_x + dx * other.n / n
        out.mean_y = self.mean_y + dy * other.n / n
        out.m2x = self.m2x + other.m2x + dx * dx * w
        out.m2y = self.m2y + other.m2y + dy * dy * w
        out.cxy = self.cxy + other.cxy + dx * dy * w
        return out

    def value(self) -> Optional[float]:
        if self.n < 2 or self.m2x <= 0 or self.m2y <= 0:
            return None
        return max(-1.0, min(1.0, self.cxy / math.sqrt(self.m2x * self.m2y)))


@dataclass
class MetricsReport:
    n: int
    hard_accuracy: float
    soft_accuracy: float
    mean_confidence: float
    correlation: Optional[float]
    model_id: str = ""
    quantization: str = ""
    breakdowns: dict = field(default_factory=dict)

    def to_json(self, scaled: bool = False) -> dict:
        k = 100.0 if scaled else 1.0
        out = {
            "model_id": self.model_id,
            "quantization": self.quantization,
            "n": self.n,
            "scaled": scaled,
            "hard_accuracy": self.hard_accuracy * k,
            "soft_accuracy": self.soft_accuracy * k,
            "mean_confidence": self.mean_confidence * k,
            "correlation": None if self.correlation is None else self.correlation * k,
        }
        if self.breakdowns:
            out["breakdowns"] = {axis: {label: sub.to_json(scaled) for label, sub in subs.items()}
                                 for axis, subs in self.breakdowns.items()}
        return out

    @classmethod
    def from_json(cls, raw: dict) -> "MetricsReport":
        k = 100.0 if raw.get("scaled") else 1.0
        corr = raw.get("correlation")
        return cls(
            n=int(raw["n"]),
            hard_accuracy=raw["hard_accuracy"] / k,
            soft_accuracy=raw["soft_accuracy"] / k,
            mean_confidence=raw["mean_confidence"] / k,
            correlation=None if corr is None else corr / k,
            model_id=raw.get("model_id", ""),
            quantization=raw.get("quantization", ""),
            breakdowns={axis: {label: cls.from_json(sub) for label, sub in subs.items()}
                        for axis, subs in raw.get("breakdowns", {}).items()},
        )


def metrics_report(records: Iterable[EvalRecord], model_id: str = "", quantization: str = "") -> MetricsReport:
    records = _require(records)
    return MetricsReport(
        n=len(records),
        hard_accuracy=hard_accuracy(records),
        soft_accuracy=soft_accuracy(records),
        mean_confidence=mean_confidence(records),
        correlation=confidence_soft_correlation(records) if len(records) >= 2 else None,
        model_id=model_id,
        quantization=quantization,
    )


def breakdown(records: Iterable[EvalRecord], items: dict, model_id: str = "",
              quantization: str = "") -> MetricsReport:
    """Overall report plus sub-reports per question type and content label."""
    records = _require(records)
    by_axis: dict = {"qtype": defaultdict(list), "content": defaultdict(list)}
    for rec in records:
        item = items.get(rec.item_id)
        if item is None:
            raise UnknownItemError(f"no item with id {rec.item_id!r}", id=rec.item_id)
        by_axis["qtype"][item.qtype.value].append(rec)
        by_axis["content"][item.content.value].append(rec)
    report = metrics_report(records, model_id, quantization)
    order = {"qtype": [q.value for q in QType], "content": [c.value for c in ContentLabel]}
    report.breakdowns = {
        axis: {label: metrics_report(groups[label], model_id, quantization)
               for label in order[axis] if label in groups}
        for axis, groups in by_axis.items()
    }
    return report


def evaluate_runs(records: Iterable[EvalRecord], items: dict) -> list[MetricsReport]:
    """One breakdown report per (model, quantization), in order of first appearance."""
    runs: dict = {}
    for rec in _require(records):
        runs.setdefault((rec.model_id, rec.quantization), []).append(rec)
    return [breakdown(recs, items, model, quant) for (model, quant), recs in runs.items()]


# -- human evaluation ---------------------------------------------------------------

def read_annotations(path) -> list[dict]:
    rows = []
    for line_no, raw in iter_json_lines(path):
        try:
            rows.append({"item_id": str(raw["item_id"]), "annotator": str(raw.get("annotator", "")),
                         "valid": _as_bool(raw["valid"]), "distractive": _as_bool(raw["distractive"])})
        except (KeyError, TypeError) as exc:
            raise MalformedLineError(line_no, f"bad annotation: {exc}") from None
    return rows


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    raise TypeError(f"expected a boolean, got {v!r}")


def human_eval_summary(annotations: Iterable[dict]) -> tuple[float, float]:
    """(valid %, distractive %) over annotated items.

    Several annotators on one item are resolved by strict majority; an
    exact tie counts as negative.
    """
    votes: dict = defaultdict(lambda: [0, 0, 0])
    for a in annotations:
        v = votes[a["item_id"]]
        v[0] += 1
        v[1] += bool(a["valid"])
        v[2] += bool(a["distractive"])
    if not votes:
        raise EmptyInputError("no annotations")
    valid = sum(1 for n, ok, _ in votes.values() if 2 * ok > n)
    distractive = sum(1 for n, _, ok in votes.values() if 2 * ok > n)
    return 100.0 * valid / len(votes), 100.0 * distractive / len(votes)


# -- rendering --------------------------------------------------------------------------

def format_scaled(x: Optional[float]) -> str:
    """Scale by 100 and round half-up to one decimal; None renders as a dash."""
    if x is None:
        return UNDEFINED_MARK
    d = (Decimal(repr(float(x))) * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{d:.1f}"


def format_percent(x: float) -> str:
    """Half-up to one decimal for values already on the 0-100 scale."""
    return f"{Decimal(repr(float(x))).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP):.1f}"


def _tables(reports: Sequence[MetricsReport]) -> list[tuple[str, list[str], list[list[str]]]]:
    t1 = ("Accuracy and confidence",
          ["Model", "Quantization", "Hard Acc.", "Soft Acc.", "Confidence", "Correlation"],
          [[r.model_id, r.quantization, format_scaled(r.hard_accuracy), format_scaled(r.soft_accuracy),
            format_scaled(r.mean_confidence), format_scaled(r.correlation)] for r in reports])
    tables = [t1]
    for axis, title, labels in (("qtype", "Soft accuracy by question type", [q.value for q in QType]),
                                ("content", "Soft accuracy by content", [c.value for c in ContentLabel])):
        present = [lab for lab in labels if any(lab in r.breakdowns.get(axis, {}) for r in reports)]
        if not present:
            continue
        rows = []
        for r in reports:
            subs = r.breakdowns.get(axis, {})
            rows.append([r.model_id, r.quantization] +
                        [format_scaled(subs[lab].soft_accuracy) if lab in subs else UNDEFINED_MARK
                         for lab in present])
        tables.append((title, ["Model", "Quantization"] + present, rows))
    return tables


def render_tables(reports: Sequence[MetricsReport], style: str = "text") -> str:
    """Render the report tables as aligned text (``text``) or ``tsv`` / ``csv``."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    out = io.StringIO()
    for title, header, rows in _tables(reports):
        if style == "text":
            widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
            out.write(title + "\n")
            line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
            out.write(line.rstrip() + "\n")
            out.write("  ".join("-" * w for w in widths) + "\n")
            for row in rows:
                cells = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
                out.write("  ".join(cells).rstrip() + "\n")
            out.write("\n")
        elif style in ("tsv", "csv"):
            writer = csv.writer(out, delimiter="\t" if style == "tsv" else ",", lineterminator="\n")
            writer.writerow(["# " + title])
            writer.writerow(header)
            writer.writerows(rows)
            out.write("\n")
        else:
            raise ValueError(f"unknown table style {style!r}")
    return out.getvalue()


def reports_to_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps({"runs": [r.to_json() for r in reports]}, indent=2, ensure_ascii=False)
