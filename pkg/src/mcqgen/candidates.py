"""Distractor candidate generation.

Two sources feed the pool: a masked language model asked to fill the
answer's slot in a full answer sentence, and nearest neighbours of the
answer in a static word-vector table.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from .core import Candidate, Provenance, ProvenanceKind, normalize_text
from .errors import AnswerNotLocated, BackendError, MultipleMasksError, NoMaskError
from .taxonomy import QuestionWordLexicon
from .transport import with_retries

_QMARKS = "?؟"


@dataclass(frozen=True)
class AnswerSentence:
    text: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end <= len(self.text):
            raise AnswerNotLocated(f"bad span ({self.start}, {self.end}) for {self.text!r}")

    @property
    def answer(self) -> str:
        return self.text[self.start:self.end]

    def substitute(self, surface: str) -> "AnswerSentence":
        """The same sentence with ``surface`` in the answer slot."""
        text = self.text[:self.start] + surface + self.text[self.end:]
        return AnswerSentence(text, self.start, self.start + len(surface))


def locate_answer(text: str, answer: str) -> AnswerSentence:
    """Find ``answer`` in ``text``: verbatim, then normalized, then case-insensitive."""
    idx = text.find(answer)
    if idx >= 0:
        return AnswerSentence(text, idx, idx + len(answer))
    words = normalize_text(answer).split()
    if words:
        pattern = re.compile(r"\s+".join(re.escape(w) for w in words), re.IGNORECASE)
        m = pattern.search(text)
        if m:
            return AnswerSentence(text, m.start(), m.end())
    raise AnswerNotLocated(f"answer {answer!r} not found in {text!r}")


def build_answer_sentence(
    question: str,
    answer: str,
    builder: Optional[Callable[[str, str], str]] = None,
    lexicon: Optional[QuestionWordLexicon] = None,
) -> AnswerSentence:
    """Turn a (question, short answer) pair into a declarative sentence.

    With ``builder`` (e.g. a long-answer generation model), its output is
    used and the answer located in it. Without one, the question's
    interrogative phrase is replaced by the answer and the question mark
    dropped; a question with no interrogative gets the answer appended.
    """
    if not question.strip() or not answer.strip():
        raise ValueError("question and answer must be non-empty")
    answer = normalize_text(answer)
    if builder is not None:
        return locate_answer(normalize_text(builder(question, answer)), answer)
    q = normalize_text(question).rstrip(_QMARKS).rstrip()
    hit = (lexicon or QuestionWordLexicon.builtin("en")).match(q)
    if hit is None:
        return AnswerSentence(f"{q} {answer}", len(q) + 1, len(q) + 1 + len(answer))
    _, s, e = hit
    text = q[:s] + answer + q[e:]
    return AnswerSentence(text, s, s + len(answer))


def mask_answer(s: AnswerSentence, mask_token: str) -> str:
    return s.text[:s.start] + mask_token + s.text[s.end:]


class FillMaskBackend(Protocol):
    id: str
    mask_token: str
    concurrent_safe: bool

    def predict(self, masked: str, k: int) -> list[tuple[str, float]]: ...


def _check_predictions(backend_id: str, preds) -> list[tuple[str, float]]:
    out = []
    prev = math.inf
    for pred in preds:
        try:
            tok, score = pred
            score = float(score)
        except (TypeError, ValueError):
            raise BackendError(f"{backend_id}: malformed prediction {pred!r}") from None
        if not math.isfinite(score):
            raise BackendError(f"{backend_id}: non-finite score for {tok!r}")
        if score > prev:
            raise BackendError(f"{backend_id}: predictions not sorted by score")
        prev = score
        out.append((str(tok), score))
    return out


def fillmask_candidates(backend: FillMaskBackend, masked: str, k: int, answer: str) -> list[Candidate]:
    """Top-``k`` fill-mask predictions for the masked slot, answer excluded.

    The answer is dropped before truncating to ``k``, so one extra
    prediction is requested from the backend.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n_masks = masked.count(backend.mask_token)
    if n_masks == 0:
        raise NoMaskError(f"no {backend.mask_token!r} in {masked!r}")
    if n_masks > 1:
        raise MultipleMasksError(f"{n_masks} masks in {masked!r}")
    try:
        preds = backend.predict(masked, k + 1)
    except BackendError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise BackendError(f"{backend.id}: {exc}") from exc
    answer_key = normalize_text(answer)
    prov = Provenance(ProvenanceKind.FILL_MASK, backend.id)
    out = []
    for tok, score in _check_predictions(backend.id, preds):
        key = normalize_text(tok)
        if not key or key == answer_key:
            continue
        out.append(Candidate(key, prov, score))
        if len(out) == k:
            break
    return out


class VocabularyFillMask:
    """Model-free fill-mask stand-in.

    Scores every vocabulary word by a hash of (masked sentence, word), so
    predictions are deterministic and vary from sentence to sentence.
    """

    concurrent_safe = True

    def __init__(self, words: Sequence[str], id: str = "vocab", mask_token: str = "<mask>"):
        self.words = list(dict.fromkeys(normalize_text(w) for w in words if normalize_text(w)))
        self.id = id
        self.mask_token = mask_token

    @classmethod
    def from_file(cls, path, **kwargs) -> "VocabularyFillMask":
        with open(path, encoding="utf-8") as fh:
            return cls([ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")], **kwargs)

    def predict(self, masked: str, k: int) -> list[tuple[str, float]]:
        scored = []
        for w in self.words:
            digest = hashlib.sha256(f"{self.id}\x00{masked}\x00{w}".encode("utf-8")).digest()
            scored.append((w, int.from_bytes(digest[:8], "big") / 2.0 ** 64))
        scored.sort(key=lambda p: (-p[1], p[0]))
        return scored[:k]


class StaticFillMask:
    """Replays fixed predictions keyed by the masked sentence."""

    concurrent_safe = True

    def __init__(self, predictions: dict, id: str = "static", mask_token: str = "<mask>",
                 default: Sequence = ()):
        self.predictions = predictions
        self.default = list(default)
        self.id = id
        self.mask_token = mask_token

    def predict(self, masked: str, k: int) -> list[tuple[str, float]]:
        return list(self.predictions.get(masked, self.default))[:k]


class ExternalFillMask:
    """Request ``{"masked", "mask_token", "k"}``, response ``{"predictions": [{"token", "score"}]}``."""

    def __init__(self, transport, id: str, mask_token: str = "<mask>", attempts: int = 3,
                 base_delay: float = 0.5):
        self.transport = transport
        self.id = id
        self.mask_token = mask_token
        self.attempts = attempts
        self.base_delay = base_delay
        self.concurrent_safe = transport.concurrent_safe

    def predict(self, masked: str, k: int) -> list[tuple[str, float]]:
        payload = {"masked": masked, "mask_token": self.mask_token, "k": k}
        resp = with_retries(lambda: self.transport.request(payload),
                            attempts=self.attempts, base_delay=self.base_delay)
        try:
            return [(p["token"], float(p["score"])) for p in resp["predictions"]]
        except (KeyError, TypeError, ValueError):
            raise BackendError(f"{self.id}: malformed predictions") from None


class WordVectorTable:
    """Static word vectors with cosine nearest-neighbour lookup."""

    def __init__(self, embedding_id: str, words: Sequence[str], vectors):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ValueError("need one vector row per word")
        keys = [normalize_text(w) for w in words]
        if len(set(keys)) != len(keys):
            raise ValueError(f"{embedding_id}: duplicate words after normalization")
        self.embedding_id = embedding_id
        self.words = keys
        self.index = {w: i for i, w in enumerate(keys)}
        self.vectors = vectors
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        self._unit = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return normalize_text(word) in self.index

    @classmethod
    def load(cls, path, embedding_id: Optional[str] = None) -> "WordVectorTable":
        """Read ``word v1 ... vd`` lines; an optional ``count dim`` header is skipped."""
        words, rows = [], []
        dim = None
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").rstrip().split(" ")
                if not line.strip():
                    continue
                if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    dim = int(parts[1])
                    continue
                word, values = parts[0], parts[1:]
                if dim is None:
                    dim = len(values)
                if len(values) != dim:
                    raise ValueError(f"{path}:{line_no}: expected {dim} values, got {len(values)}")
                words.append(word)
                rows.append([float(v) for v in values])
        return cls(embedding_id or str(path), words, np.array(rows, dtype=float).reshape(len(rows), dim or 0))

    def cosine_to(self, word: str) -> np.ndarray:
        return self._unit @ self._unit[self.index[normalize_text(word)]]


def embedding_candidates(table: WordVectorTable, answer: str, k: int) -> list[Candidate]:
    """The ``k`` nearest table words to the answer by cosine similarity.

    An answer missing from the table yields no candidates. Ties are broken
    by word so the result does not depend on table order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    key = normalize_text(answer)
    if key not in table.index:
        return []
    sims = table.cosine_to(key)
    me = table.index[key]
    order = sorted((i for i in range(len(table)) if i != me),
                   key=lambda i: (-sims[i], table.words[i]))
    prov = Provenance(ProvenanceKind.STATIC_EMBEDDING, table.embedding_id)
    return [Candidate(table.words[i], prov, float(sims[i])) for i in order[:k]]


_CLASS_ORDER = {ProvenanceKind.FILL_MASK: 0, ProvenanceKind.STATIC_EMBEDDING: 1}


def merge_pool(lists: Iterable[Iterable[Candidate]], answer: str) -> list[Candidate]:
    """Concatenate candidate lists into one deduplicated pool.

    Duplicates (by normalized surface) keep a single instance: a fill-mask
    occurrence beats an embedding one, and within a provenance class the
    highest generator score wins. Output order is fill-mask first, then
    embedding, each by descending score with ties broken by surface.
    """
    answer_key = normalize_text(answer)
    best: dict[str, Candidate] = {}

    def rank(c: Candidate):
        return (_CLASS_ORDER[c.provenance.kind], -c.generator_score, c.surface, c.provenance.source)

    for lst in lists:
        for cand in lst:
            key = cand.key
            if key == answer_key:
                continue
            if key not in best or rank(cand) < rank(best[key]):
                best[key] = cand
    return sorted(best.values(), key=rank)
