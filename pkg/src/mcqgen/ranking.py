"""Distractor ranking and MCQ assembly.

Each surviving candidate gets two similarity scores against the answer: a
contextual one (encoder vectors of the answer slot with the answer vs. the
candidate substituted in) and a knowledge-graph one (entity embeddings).
Scores are min-max normalized per question and feature, fused by a
weighted mean, and the best few become the wrong choices.
"""

from __future__ import annotations

import dataclasses
import hashlib
import random
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .candidates import AnswerSentence
from .core import (Candidate, ContentLabel, Flag, MCQItem, PipelineConfig, ProvenanceKind,
                   QARecord, QType, ShuffleScope, normalize_text, tokenize)
from .errors import BackendError, BothMissingError, EmptyTopError, EncoderError
from .kg import ComplexEmbedding, entity_similarity
from .transport import with_retries


class ContextEncoder(Protocol):
    id: str
    dim: int

    def embed(self, sentence: str, span: tuple[int, int]) -> np.ndarray: ...


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


class HashingEncoder:
    """Model-free contextual encoder for tests and offline runs.

    The target span contributes hashed character trigrams; the rest of the
    sentence contributes hashed words at a lower weight, so the same word
    in different sentences gets related but distinct vectors.
    """

    concurrent_safe = True

    def __init__(self, dim: int = 64, context_weight: float = 0.3, id: str = "hashing"):
        self.dim = dim
        self.context_weight = context_weight
        self.id = id

    def _bucket(self, feature: str) -> tuple[int, float]:
        d = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
        v = int.from_bytes(d, "big")
        return v % self.dim, 1.0 if (v >> 32) & 1 else -1.0

    def embed(self, sentence: str, span: tuple[int, int]) -> np.ndarray:
        start, end = span
        vec = np.zeros(self.dim)
        target = f"#{normalize_text(sentence[start:end]).casefold()}#"
        for i in range(len(target) - 2):
            j, sign = self._bucket("c:" + target[i:i + 3])
            vec[j] += sign
        for tok, s, e in tokenize(sentence):
            if e <= start or s >= end:
                j, sign = self._bucket("w:" + tok.casefold())
                vec[j] += sign * self.context_weight
        return vec


class TransformersEncoder:
    """Hidden states of a Hugging Face encoder at a chosen layer.

    ``layer=2`` is the output of the second transformer block:
    ``hidden_states[0]`` is the embedding layer and is not counted. The
    span vector is the mean over sub-word tokens overlapping the span.
    """

    concurrent_safe = False

    def __init__(self, model_name_or_path: str, layer: int = 2, id: Optional[str] = None,
                 tokenizer=None, model=None):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(model_name_or_path)
        self.model = model or AutoModel.from_pretrained(model_name_or_path)
        self.model.eval()
        self.layer = layer
        self.dim = self.model.config.hidden_size
        self.id = id or f"{model_name_or_path}@L{layer}"

    def embed(self, sentence: str, span: tuple[int, int]) -> np.ndarray:
        enc = self.tokenizer(sentence, return_offsets_mapping=True, return_tensors="pt",
                             truncation=True)
        offsets = enc.pop("offset_mapping")[0].tolist()
        with self._torch.no_grad():
            out = self.model(**enc, output_hidden_states=True)
        hidden = out.hidden_states[self.layer][0]
        start, end = span
        idx = [i for i, (s, e) in enumerate(offsets) if e > s and s < end and e > start]
        if not idx:
            raise EncoderError(f"{self.id}: no token overlaps span {span} of {sentence!r}")
        return hidden[idx].mean(dim=0).numpy().astype(float)


class ExternalEncoder:
    """Request ``{"sentence", "span": [start, end]}``, response ``{"vector": [...]}``."""

    def __init__(self, transport, dim: int, id: str = "external-encoder", attempts: int = 3):
        self.transport = transport
        self.dim = dim
        self.id = id
        self.attempts = attempts
        self.concurrent_safe = transport.concurrent_safe

    def embed(self, sentence: str, span: tuple[int, int]) -> np.ndarray:
        payload = {"sentence": sentence, "span": [span[0], span[1]]}
        resp = with_retries(lambda: self.transport.request(payload), attempts=self.attempts)
        try:
            return np.asarray(resp["vector"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise EncoderError(f"{self.id}: malformed vector") from None


def _embed(enc: ContextEncoder, sentence: str, span: tuple[int, int]) -> np.ndarray:
    try:
        vec = np.asarray(enc.embed(sentence, span), dtype=float)
    except EncoderError:
        raise
    except BackendError as exc:
        raise EncoderError(str(exc)) from exc
    except Exception as exc:  # noqa: BLE001
        raise EncoderError(f"{enc.id}: {exc}") from exc
    if vec.shape != (enc.dim,) or not np.all(np.isfinite(vec)):
        raise EncoderError(f"{enc.id}: expected a finite vector of length {enc.dim}, got {vec.shape}")
    return vec


def context_similarity(enc: ContextEncoder, s: AnswerSentence, answer: str, cand: str) -> float:
    """Cosine between the answer slot's vector and the candidate's in the same sentence."""
    if normalize_text(s.answer) != normalize_text(answer):
        raise ValueError(f"sentence span holds {s.answer!r}, not {answer!r}")
    a = _embed(enc, s.text, (s.start, s.end))
    sub = s.substitute(cand)
    b = _embed(enc, sub.text, (sub.start, sub.end))
    return _cosine(a, b)


def minmax_normalize(xs: Sequence[Optional[float]]) -> list[Optional[float]]:
    """Rescale to [0, 1]; None entries pass through; a constant input maps to 0.5."""
    present = [x for x in xs if x is not None]
    if not present:
        return list(xs)
    lo, hi = min(present), max(present)
    if hi == lo:
        return [None if x is None else 0.5 for x in xs]
    span = hi - lo
    return [None if x is None else min(1.0, max(0.0, (x - lo) / span)) for x in xs]


def fuse_scores(kg_norm: Optional[float], ctx_norm: Optional[float],
                weights: tuple[float, float] = (0.5, 0.5)) -> float:
    """Weighted mean of the two normalized scores, or whichever one is present."""
    if kg_norm is None and ctx_norm is None:
        raise BothMissingError("no knowledge-graph or context score")
    if kg_norm is None:
        return ctx_norm
    if ctx_norm is None:
        return kg_norm
    w_kg, w_ctx = weights
    return w_kg * kg_norm + w_ctx * ctx_norm


def score_candidates(cands: Sequence[Candidate], s: AnswerSentence, answer: str,
                     encoder: Optional[ContextEncoder], kg: Optional[ComplexEmbedding],
                     weights: tuple[float, float] = (0.5, 0.5)) -> list[Candidate]:
    """Attach normalized kg/context scores and the fused score to each candidate."""
    raw_kg = [entity_similarity(kg, answer, c.surface) if kg is not None else None for c in cands]
    raw_ctx = [context_similarity(encoder, s, s.answer, c.surface) if encoder is not None else None
               for c in cands]
    return fuse_raw(cands, raw_kg, raw_ctx, weights)


def fuse_raw(cands: Sequence[Candidate], raw_kg: Sequence[Optional[float]],
             raw_ctx: Sequence[Optional[float]],
             weights: tuple[float, float] = (0.5, 0.5)) -> list[Candidate]:
    out = []
    for c, k, x in zip(cands, minmax_normalize(raw_kg), minmax_normalize(raw_ctx)):
        out.append(dataclasses.replace(c, kg_score=k, context_score=x,
                                       fused_score=fuse_scores(k, x, weights)))
    return out


@dataclass(frozen=True)
class RankedCandidate:
    candidate: Candidate
    rank: int


_CLASS_ORDER = {ProvenanceKind.FILL_MASK: 0, ProvenanceKind.STATIC_EMBEDDING: 1}


def rank_key(c: Candidate):
    """Total order: fused score, fill-mask before embedding, generator score, surface."""
    return (-c.fused_score, _CLASS_ORDER[c.provenance.kind], -c.generator_score, c.surface)


def select_top(cands: Sequence[Candidate], n: int) -> list[RankedCandidate]:
    if n < 1:
        raise ValueError("n must be >= 1")
    ordered = sorted(cands, key=rank_key)[:n]
    return [RankedCandidate(c, i) for i, c in enumerate(ordered, start=1)]


def stable_seed(*parts) -> int:
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def assemble_mcq(rec: QARecord, question: str, top: Sequence[RankedCandidate], cfg: PipelineConfig,
                 relaxed: bool = False, qtype: QType = QType.WHAT,
                 content: ContentLabel = ContentLabel.OTHERS) -> MCQItem:
    """Shuffle the answer in among the distractors with a per-item seed."""
    if not top:
        raise EmptyTopError(f"record {rec.id}: no distractors")
    if len(top) > cfg.distractor_count:
        raise ValueError(f"{len(top)} distractors exceed distractor_count={cfg.distractor_count}")
    answer = normalize_text(rec.answer)
    choices = [answer] + [r.candidate.surface for r in top]
    if cfg.shuffle_seed_scope is ShuffleScope.GLOBAL:
        seed = stable_seed(cfg.shuffle_seed, rec.id)
    else:
        seed = stable_seed(rec.id)
    order = list(range(len(choices)))
    random.Random(seed).shuffle(order)
    flags = set()
    if len(top) < cfg.distractor_count:
        flags.add(Flag.INCOMPLETE_DISTRACTORS)
    if relaxed:
        flags.add(Flag.FILTER_RELAXED)
    return MCQItem(
        id=rec.id,
        question=question,
        choices=tuple(choices[i] for i in order),
        correct_index=order.index(0),
        qtype=qtype,
        content=content,
        flags=frozenset(flags),
    )
