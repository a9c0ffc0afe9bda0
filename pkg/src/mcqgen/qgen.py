"""Question generation from (answer, context) pairs.

Real generators (e.g. a fine-tuned seq2seq model) live behind
:class:`QGBackend`. The shipped :class:`TemplateQG` is deterministic and
needs no model, which is what the tests and demo runs use.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol

from .core import QARecord, normalize_text
from .errors import BackendError, EmptyFieldError
from .transport import with_retries

DEFAULT_SEP = "[SEP]"
BLANK = "___"

_SENTENCE_END = re.compile(r"(?<=[.!?؟。])\s+")


@dataclass(frozen=True)
class QGInput:
    answer: str
    context: str
    sep_token: str = DEFAULT_SEP

    def __post_init__(self):
        if not self.answer.strip() or not self.context.strip() or not self.sep_token.strip():
            raise EmptyFieldError("answer, context and separator must be non-empty")
        if self.sep_token in self.answer:
            raise EmptyFieldError(f"separator {self.sep_token!r} occurs in the answer")


def format_qg_input(answer: str, context: str, sep: str = DEFAULT_SEP) -> str:
    """Return ``"<answer> <sep> <context>"``, the generator's input string."""
    inp = QGInput(answer, context, sep)
    return f"{inp.answer.strip()} {inp.sep_token} {inp.context.strip()}"


class QGBackend(Protocol):
    id: str
    concurrent_safe: bool

    def generate(self, inp: QGInput) -> str: ...


def _answer_pattern(answer: str) -> re.Pattern:
    words = normalize_text(answer).split()
    return re.compile(r"\s*".join(re.escape(w) for w in words), re.IGNORECASE)


class TemplateQG:
    """Blank out the answer in the context sentence that holds it."""

    id = "template"
    concurrent_safe = True

    def generate(self, inp: QGInput) -> str:
        context = normalize_text(inp.context)
        pattern = _answer_pattern(inp.answer)
        sentences = _SENTENCE_END.split(context)
        clause = next((s for s in sentences if pattern.search(s)), sentences[0])
        clause = pattern.sub(BLANK, clause).rstrip(" .!?؟")
        return f"What corresponds to the blank in: {clause}?"


class ExternalQG:
    """Adapter for a generator process or service.

    Request ``{"answer", "context"}``, response ``{"question"}``.
    """

    def __init__(self, transport, id: str = "external", attempts: int = 3, base_delay: float = 0.5):
        self.transport = transport
        self.id = id
        self.attempts = attempts
        self.base_delay = base_delay
        self.concurrent_safe = transport.concurrent_safe

    def generate(self, inp: QGInput) -> str:
        resp = with_retries(
            lambda: self.transport.request({"answer": inp.answer, "context": inp.context}),
            attempts=self.attempts, base_delay=self.base_delay,
        )
        q = resp.get("question")
        if not isinstance(q, str):
            raise BackendError(f"{self.id}: response lacks 'question'")
        return q


def generate_question(backend: QGBackend, rec: QARecord, bypass: bool = False,
                      sep: str = DEFAULT_SEP) -> str:
    """Produce the question text for ``rec``.

    With ``bypass`` set and a question already present on the record, that
    question is used verbatim and the backend is not called.
    """
    if bypass and rec.question.strip():
        return rec.question
    try:
        q = backend.generate(QGInput(rec.answer, rec.context, sep))
    except (BackendError, EmptyFieldError):
        raise
    except Exception as exc:  # noqa: BLE001 - adapters may raise anything
        raise BackendError(f"{backend.id}: {exc}") from exc
    if not q or not q.strip():
        raise BackendError(f"{backend.id}: empty question for record {rec.id}")
    return q.strip()
