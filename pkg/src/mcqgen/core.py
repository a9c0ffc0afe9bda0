"""Shared domain types, text normalization and line-delimited dataset I/O."""

from __future__ import annotations

import enum
import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import InvariantViolation, MalformedLineError, SpanMismatchError

ZWNJ = "\u200c"
# Zero-width space is a common stand-in for ZWNJ in scraped Persian text.
_ZWNJ_VARIANTS = "\u200b\u200c"
_ZWNJ_RUN = re.compile(f"[{_ZWNJ_VARIANTS}]+")
_ZWNJ_AT_SPACE = re.compile(rf"\s*{ZWNJ}\s+|\s+{ZWNJ}\s*")
_DIGITS = str.maketrans(
    "\u0660\u0661\u0662\u0663\u0664\u0665\u0666\u0667\u0668\u0669"
    "\u06f0\u06f1\u06f2\u06f3\u06f4\u06f5\u06f6\u06f7\u06f8\u06f9",
    "01234567890123456789",
)


def fold_digits(s: str) -> str:
    """Map Arabic-Indic and Extended Arabic-Indic digits to ASCII."""
    return s.translate(_DIGITS)


def _normalize_once(s: str) -> str:
    s = unicodedata.normalize("NFKC", s)
    s = s.translate(_DIGITS)
    s = _ZWNJ_RUN.sub(ZWNJ, s)
    s = _ZWNJ_AT_SPACE.sub(" ", s)
    s = " ".join(s.split())
    return s.strip(ZWNJ)


def normalize_text(s: str) -> str:
    """Canonicalize ``s`` for comparisons.

    NFKC, Eastern-Arabic digits folded to ASCII, zero-width joiner variants
    collapsed to a single ZWNJ (dropped next to whitespace or at the ends),
    whitespace trimmed and collapsed. The steps are iterated to a fixed
    point, so the function is idempotent.
    """
    for _ in range(8):
        out = _normalize_once(s)
        if out == s:
            return out
        s = out
    return s


_TOKEN = re.compile(r"[\w\u200c]+|[^\w\s\u200c]")


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Split into word and punctuation tokens with ``(token, start, end)`` offsets."""
    return [(m.group(), m.start(), m.end()) for m in _TOKEN.finditer(text)]


class QType(str, enum.Enum):
    WHAT = "WHAT"
    WHEN = "WHEN"
    HOW = "HOW"
    HOW_MANY = "HOW_MANY"
    WHERE = "WHERE"
    WHO = "WHO"
    WHICH = "WHICH"


class ContentLabel(str, enum.Enum):
    HISTORY = "HISTORY"
    TECHNOLOGY = "TECHNOLOGY"
    HEALTH_MEDICINE = "HEALTH_MEDICINE"
    ECONOMY_COMMERCE = "ECONOMY_COMMERCE"
    POLITICS = "POLITICS"
    GEOGRAPHY = "GEOGRAPHY"
    ART_CULTURE = "ART_CULTURE"
    SCIENCE = "SCIENCE"
    SPORT = "SPORT"
    SOCIETY = "SOCIETY"
    RELIGION = "RELIGION"
    OTHERS = "OTHERS"


class Flag(str, enum.Enum):
    INCOMPLETE_DISTRACTORS = "INCOMPLETE_DISTRACTORS"
    FILTER_RELAXED = "FILTER_RELAXED"


class FilterStage(str, enum.Enum):
    POS = "POS"
    WRITTEN_FORM = "WRITTEN_FORM"
    NER = "NER"
    DEDUPE = "DEDUPE"


class ProvenanceKind(str, enum.Enum):
    FILL_MASK = "FILL_MASK"
    STATIC_EMBEDDING = "STATIC_EMBEDDING"


@dataclass(frozen=True)
class Provenance:
    kind: ProvenanceKind
    source: str

    def __str__(self) -> str:
        return f"{self.kind.value}({self.source})"

    @classmethod
    def parse(cls, text: str) -> "Provenance":
        m = re.fullmatch(r"(\w+)\((.*)\)", text)
        if not m:
            raise ValueError(f"bad provenance {text!r}")
        return cls(ProvenanceKind(m.group(1)), m.group(2))


@dataclass(frozen=True)
class FilterVerdict:
    stage: FilterStage
    passed: bool
    reason: str = ""

    def __post_init__(self):
        if not self.passed and not self.reason:
            raise ValueError("a failed verdict needs a reason")


@dataclass(frozen=True)
class QARecord:
    id: str
    context: str
    question: str
    answer: str
    answer_start: Optional[int] = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not normalize_text(self.answer):
            raise InvariantViolation(f"record {self.id}: empty answer", id=self.id)
        if self.answer_start is not None:
            end = self.answer_start + len(self.answer)
            sliced = self.context[self.answer_start:end]
            if self.answer_start < 0 or normalize_text(sliced) != normalize_text(self.answer):
                raise SpanMismatchError(
                    f"record {self.id}: context[{self.answer_start}:{end}]={sliced!r} "
                    f"!= answer {self.answer!r}",
                    id=self.id,
                )


@dataclass(frozen=True)
class Candidate:
    surface: str
    provenance: Provenance
    generator_score: float
    kg_score: Optional[float] = None
    context_score: Optional[float] = None
    fused_score: Optional[float] = None
    rejections: tuple = ()

    def __post_init__(self):
        if not normalize_text(self.surface):
            raise InvariantViolation("empty candidate surface")
        if self.fused_score is not None and self.kg_score is None and self.context_score is None:
            raise InvariantViolation(f"candidate {self.surface!r}: fused score without inputs")

    @property
    def key(self) -> str:
        return normalize_text(self.surface)

    def to_json(self, item_id: str) -> dict:
        return {
            "id": item_id,
            "surface": self.surface,
            "provenance": str(self.provenance),
            "generator_score": self.generator_score,
            "kg_score": self.kg_score,
            "context_score": self.context_score,
            "fused_score": self.fused_score,
            "rejections": [
                {"stage": v.stage.value, "passed": v.passed, "reason": v.reason}
                for v in self.rejections
            ],
        }


@dataclass(frozen=True)
class MCQItem:
    id: str
    question: str
    choices: tuple
    correct_index: int
    qtype: QType = QType.WHAT
    content: ContentLabel = ContentLabel.OTHERS
    flags: frozenset = frozenset()

    def validate(self, n_choices: int = 4) -> None:
        """Raise InvariantViolation unless the item is well formed.

        Items flagged INCOMPLETE_DISTRACTORS may carry fewer than
        ``n_choices`` choices.
        """
        keys = [normalize_text(c) for c in self.choices]
        incomplete = Flag.INCOMPLETE_DISTRACTORS in self.flags
        if len(keys) != n_choices and not (incomplete and 1 <= len(keys) < n_choices):
            raise InvariantViolation(f"item {self.id}: {len(keys)} choices", id=self.id)
        if len(set(keys)) != len(keys) or not all(keys):
            raise InvariantViolation(f"item {self.id}: duplicate or empty choices", id=self.id)
        if not 0 <= self.correct_index < len(keys):
            raise InvariantViolation(f"item {self.id}: correct_index out of range", id=self.id)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "choices": list(self.choices),
            "correct_index": self.correct_index,
            "qtype": self.qtype.value,
            "content": self.content.value,
            "flags": sorted(f.value for f in self.flags),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "MCQItem":
        return cls(
            id=str(raw["id"]),
            question=raw["question"],
            choices=tuple(raw["choices"]),
            correct_index=int(raw["correct_index"]),
            qtype=QType(raw.get("qtype", "WHAT")),
            content=ContentLabel(raw.get("content", "OTHERS")),
            flags=frozenset(Flag(f) for f in raw.get("flags", [])),
        )


class ShuffleScope(str, enum.Enum):
    PER_ITEM_ID = "per_item_id"
    GLOBAL = "global"


@dataclass(frozen=True)
class PipelineConfig:
    fillmask_top_k: int = 20
    embedding_top_k: int = 10
    distractor_count: int = 3
    shuffle_seed_scope: ShuffleScope = ShuffleScope.PER_ITEM_ID
    shuffle_seed: int = 0
    relaxation_policy: tuple = (FilterStage.POS, FilterStage.NER)
    fusion_weights: tuple = (0.5, 0.5)

    def __post_init__(self):
        for name in ("fillmask_top_k", "embedding_top_k", "distractor_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        w_kg, w_ctx = self.fusion_weights
        if w_kg < 0 or w_ctx < 0 or not math.isclose(w_kg + w_ctx, 1.0, abs_tol=1e-9):
            raise ValueError(f"fusion weights must be non-negative and sum to 1, got {self.fusion_weights}")
        if FilterStage.DEDUPE in self.relaxation_policy:
            raise ValueError("DEDUPE is never relaxed")


# -- line-delimited I/O ----------------------------------------------------------

def iter_json_lines(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_no, object)`` for each non-blank line; 1-based numbering."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLineError(line_no, str(exc)) from None
            if not isinstance(raw, dict):
                raise MalformedLineError(line_no, "expected a JSON object")
            yield line_no, raw


def read_dataset(path) -> Iterator[QARecord]:
    """Stream QA records from a JSON-lines file, in file order."""
    for line_no, raw in iter_json_lines(path):
        try:
            rec_id = raw["id"]
            context = raw["context"]
            question = raw.get("question", "")
            answer = raw["answer"]
        except KeyError as exc:
            raise MalformedLineError(line_no, f"missing field {exc}") from None
        start = raw.get("answer_start")
        if not isinstance(answer, str) or not isinstance(context, str):
            raise MalformedLineError(line_no, "answer and context must be strings")
        if start is not None and (isinstance(start, bool) or not isinstance(start, int)):
            raise MalformedLineError(line_no, "answer_start must be an integer")
        meta = {k: str(v) for k, v in raw.items()
                if k not in ("id", "context", "question", "answer", "answer_start")}
        try:
            yield QARecord(str(rec_id), context, question or "", answer, start, meta)
        except InvariantViolation as exc:
            raise MalformedLineError(line_no, exc.detail) from None


def write_qa_dataset(records: Iterable[QARecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            raw = {"id": rec.id, "context": rec.context, "question": rec.question, "answer": rec.answer}
            if rec.answer_start is not None:
                raw["answer_start"] = rec.answer_start
            fh.write(json.dumps(raw, ensure_ascii=False) + "\n")
            n += 1
    return n


def write_mcq_dataset(items: Iterable[MCQItem], path, n_choices: int = 4) -> int:
    """Validate and write MCQ items, one JSON object per line.

    Validation happens before anything touches the file, so an invariant
    violation never leaves a half-written dataset behind.
    """
    items = list(items)
    for item in items:
        item.validate(n_choices)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json(), ensure_ascii=False) + "\n")
    return len(items)


def read_mcq_dataset(path) -> Iterator[MCQItem]:
    for line_no, raw in iter_json_lines(path):
        try:
            yield MCQItem.from_json(raw)
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedLineError(line_no, f"bad MCQ record: {exc}") from None


def write_candidate_audit(rows: Iterable[tuple[str, Candidate]], fh) -> int:
    n = 0
    for item_id, cand in rows:
        fh.write(json.dumps(cand.to_json(item_id), ensure_ascii=False) + "\n")
        n += 1
    return n
