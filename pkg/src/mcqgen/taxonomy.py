"""Question categorization by type (lexicon rules) and by content (LLM)."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Optional, Protocol

from .core import ContentLabel, MCQItem, QType, normalize_text, tokenize
from .errors import BackendError, ClientError, ConfigError
from .transport import HttpTransport

log = logging.getLogger(__name__)


def _norm_tokens(text: str) -> list[tuple[str, int, int]]:
    """Word tokens of ``text``, casefolded, with offsets into ``text``."""
    return [(t.casefold(), s, e) for t, s, e in tokenize(text) if t[0].isalnum() or t[0] == "_"]


@dataclass
class QuestionWordLexicon:
    """Ordered (pattern, qtype) rules with longest-pattern-first priority."""

    entries: list = field(default_factory=list)
    fallback: QType = QType.WHAT

    def __post_init__(self):
        cleaned = []
        for pattern, qtype in self.entries:
            toks = tuple(t for t, _, _ in _norm_tokens(normalize_text(pattern)))
            if not toks:
                raise ValueError(f"empty lexicon pattern {pattern!r}")
            cleaned.append((toks, QType(qtype)))
        # stable sort keeps file order within equal lengths
        self.entries = sorted(cleaned, key=lambda e: -len(e[0]))

    @classmethod
    def from_file(cls, path, fallback: QType = QType.WHAT) -> "QuestionWordLexicon":
        with open(path, encoding="utf-8") as fh:
            return cls(_parse_lexicon(fh.read(), str(path)), fallback)

    @classmethod
    def builtin(cls, lang: str = "en") -> "QuestionWordLexicon":
        text = resources.files("mcqgen.data").joinpath(f"lexicon_{lang}.tsv").read_text("utf-8")
        return cls(_parse_lexicon(text, f"lexicon_{lang}.tsv"))

    def match(self, text: str) -> Optional[tuple[QType, int, int]]:
        """Return ``(qtype, start, end)`` char offsets of the winning pattern in ``text``."""
        toks = _norm_tokens(text)
        words = [t for t, _, _ in toks]
        for pattern, qtype in self.entries:
            n = len(pattern)
            for i in range(len(words) - n + 1):
                if tuple(words[i:i + n]) == pattern:
                    return qtype, toks[i][1], toks[i + n - 1][2]
        return None


def _parse_lexicon(text: str, source: str) -> list:
    entries = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise ConfigError(f"{source}:{line_no}: expected 'pattern<TAB>QTYPE'")
        try:
            entries.append((parts[0], QType(parts[1].strip())))
        except ValueError:
            raise ConfigError(f"{source}:{line_no}: unknown question type {parts[1]!r}") from None
    return entries


def classify_type(question: str, lex: QuestionWordLexicon) -> QType:
    if not question.strip():
        raise ValueError("empty question")
    hit = lex.match(normalize_text(question))
    return hit[0] if hit else lex.fallback


# -- content categories ------------------------------------------------------------

CONTENT_ALIASES: dict[ContentLabel, tuple[str, ...]] = {
    ContentLabel.HISTORY: ("history", "historical", "تاریخ", "تاریخی"),
    ContentLabel.TECHNOLOGY: ("technology", "technological", "tech", "فناوری", "تکنولوژی", "فن\u200cآوری"),
    ContentLabel.HEALTH_MEDICINE: ("health", "medicine", "medical", "health medicine",
                                   "سلامت", "پزشکی", "بهداشت", "سلامت و پزشکی"),
    ContentLabel.ECONOMY_COMMERCE: ("economy", "economics", "economic", "commerce", "business",
                                    "economy commerce", "اقتصاد", "اقتصادی", "تجارت", "اقتصاد و تجارت"),
    ContentLabel.POLITICS: ("politics", "political", "سیاست", "سیاسی"),
    ContentLabel.GEOGRAPHY: ("geography", "geographic", "geographical", "جغرافیا", "جغرافیایی"),
    ContentLabel.ART_CULTURE: ("art", "arts", "culture", "cultural", "art culture",
                               "هنر", "فرهنگ", "هنری", "فرهنگی", "هنر و فرهنگ"),
    ContentLabel.SCIENCE: ("science", "scientific", "sciences", "علم", "علوم", "علمی"),
    ContentLabel.SPORT: ("sport", "sports", "ورزش", "ورزشی"),
    ContentLabel.SOCIETY: ("society", "social", "جامعه", "اجتماعی"),
    ContentLabel.RELIGION: ("religion", "religious", "دین", "مذهب", "مذهبی", "دینی"),
    ContentLabel.OTHERS: ("others", "other", "سایر", "متفرقه"),
}

_ALIAS_INDEX: dict[tuple[str, ...], ContentLabel] = {}
for _label, _aliases in CONTENT_ALIASES.items():
    for _alias in (_label.value.lower().replace("_", " "), *_aliases):
        _ALIAS_INDEX[tuple(t for t, _, _ in _norm_tokens(_alias))] = _label
_MAX_ALIAS = max(len(k) for k in _ALIAS_INDEX)


def parse_content_label(response: str) -> Optional[ContentLabel]:
    """Map an LLM reply to a single label, or None if absent or ambiguous.

    The reply is scanned for alias n-grams; longer aliases shadow the words
    they contain, so "Health & Medicine" counts once.
    """
    words = [t for t, _, _ in _norm_tokens(normalize_text(response).replace("_", " "))]
    if not words:
        return None
    whole = _ALIAS_INDEX.get(tuple(words))
    if whole is not None:
        return whole
    found: set[ContentLabel] = set()
    i = 0
    while i < len(words):
        for n in range(min(_MAX_ALIAS, len(words) - i), 0, -1):
            label = _ALIAS_INDEX.get(tuple(words[i:i + n]))
            if label is not None:
                found.add(label)
                i += n
                break
        else:
            i += 1
    return found.pop() if len(found) == 1 else None


class LLMClient(Protocol):
    id: str

    def complete(self, prompt: str) -> str: ...


class AuditLog:
    """Append-only JSON-lines log of every LLM exchange."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


class HttpLLMClient:
    """Chat-completions style client configured from the environment.

    ``MCQ_LLM_ENDPOINT`` (full URL), ``MCQ_LLM_API_KEY`` and
    ``MCQ_LLM_MODEL`` are read at construction time.
    """

    def __init__(self, endpoint: Optional[str] = None, api_key: Optional[str] = None,
                 model: Optional[str] = None, timeout: float = 60.0):
        endpoint = endpoint or os.environ.get("MCQ_LLM_ENDPOINT")
        if not endpoint:
            raise ConfigError("no LLM endpoint: set MCQ_LLM_ENDPOINT")
        api_key = api_key or os.environ.get("MCQ_LLM_API_KEY", "")
        self.model = model or os.environ.get("MCQ_LLM_MODEL", "gpt-4o")
        self.id = f"http:{self.model}"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.transport = HttpTransport(endpoint, timeout=timeout, headers=headers)

    def complete(self, prompt: str) -> str:
        resp = self.transport.request({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        })
        try:
            return resp["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendError(f"{self.id}: unexpected response shape") from None


class ReplayClient:
    """Answers from a recorded transcript: JSON lines of ``{"question", "response"}``.

    The prompt is matched by the question text it contains. Unknown
    questions raise ClientError, like an unreachable service would.
    """

    concurrent_safe = True

    def __init__(self, responses: dict, id: str = "replay"):
        self.responses = dict(responses)
        self.id = id

    @classmethod
    def from_file(cls, path, **kwargs) -> "ReplayClient":
        responses = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    responses[row["question"]] = row["response"]
        return cls(responses, **kwargs)

    def complete(self, prompt: str) -> str:
        # longest question first so a question that prefixes another cannot shadow it
        for question in sorted(self.responses, key=len, reverse=True):
            if question in prompt:
                return self.responses[question]
        raise ClientError(f"{self.id}: no recorded response for prompt")


def load_prompt_template(path=None) -> str:
    if path is None:
        return resources.files("mcqgen.data").joinpath("content_prompt.txt").read_text("utf-8")
    with open(path, encoding="utf-8") as fh:
        template = fh.read()
    for slot in ("{{question}}", "{{choices}}"):
        if slot not in template:
            raise ConfigError(f"prompt template {path} lacks {slot}")
    return template


def render_prompt(template: str, item: MCQItem) -> str:
    choices = "\n".join(f"{i + 1}. {c}" for i, c in enumerate(item.choices))
    return template.replace("{{question}}", item.question).replace("{{choices}}", choices)


def classify_content(
    item: MCQItem,
    client: LLMClient,
    template: str,
    attempts: int = 3,
    base_delay: float = 0.5,
    audit: Optional[AuditLog] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ContentLabel:
    """Ask ``client`` for the content label of ``item``.

    Up to ``attempts`` calls are made. An unparseable reply on every attempt
    yields OTHERS; if no attempt produced a reply at all, ClientError.
    """
    prompt = render_prompt(template, item)
    replied = False
    last_error: Optional[Exception] = None
    for attempt in range(attempts):
        try:
            reply = client.complete(prompt)
        except Exception as exc:  # noqa: BLE001 - any transport failure counts
            last_error = exc
            if audit:
                audit.write({"item_id": item.id, "client": client.id, "attempt": attempt + 1,
                             "prompt": prompt, "error": str(exc)})
            if attempt + 1 < attempts:
                sleep(base_delay * 2 ** attempt)
            continue
        replied = True
        label = parse_content_label(reply)
        if audit:
            audit.write({"item_id": item.id, "client": client.id, "attempt": attempt + 1,
                         "prompt": prompt, "response": reply,
                         "label": label.value if label else None})
        if label is not None:
            return label
    if not replied:
        raise ClientError(f"item {item.id}: {last_error}", id=item.id)
    log.info("item %s: unparseable replies, labelled OTHERS", item.id)
    return ContentLabel.OTHERS


def classify_content_many(items: list, client: LLMClient, template: str,
                          max_in_flight: int = 4, **kwargs) -> list:
    """Label many items concurrently; results are in input order.

    Entries are ContentLabel values, or the ClientError raised for that item.
    """

    def one(item):
        try:
            return classify_content(item, client, template, **kwargs)
        except ClientError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        return list(pool.map(one, items))


@dataclass
class DistributionReport:
    n: int
    qtype: dict
    content: dict

    def rows(self):
        for axis in ("qtype", "content"):
            for label, count in getattr(self, axis).items():
                yield axis, label, count

    def to_json(self) -> dict:
        return {"n": self.n, "qtype": self.qtype, "content": self.content}


def distribution_report(items: Iterable[MCQItem]) -> DistributionReport:
    qtypes: Counter = Counter()
    contents: Counter = Counter()
    n = 0
    for item in items:
        qtypes[item.qtype.value] += 1
        contents[item.content.value] += 1
        n += 1
    return DistributionReport(
        n=n,
        qtype={q.value: qtypes[q.value] for q in QType},
        content={c.value: contents[c.value] for c in ContentLabel},
    )
