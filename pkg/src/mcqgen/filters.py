"""Candidate filtering: POS/dependency agreement, written form, entity type.

Stages run in the order POS -> WRITTEN_FORM -> NER -> DEDUPE. When too few
candidates survive, stages named in the relaxation policy are dropped one
at a time and the stack is re-run. DEDUPE and the digits-only rule for
numeric answers are never relaxed.
"""

from __future__ import annotations

import dataclasses
import enum
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

from .candidates import AnswerSentence
from .core import Candidate, FilterStage, FilterVerdict, PipelineConfig, normalize_text, tokenize
from .errors import BackendError, NERError, TaggerError
from .numwords import normalize_written_form, parse_number_words
from .transport import with_retries

_DIGITS_ONLY = re.compile(r"[0-9]+")

# Dependents that are never the head of a multi-token span.
NON_HEAD_DEPRELS = frozenset({
    "det", "case", "amod", "compound", "flat", "fixed", "nummod", "advmod", "punct",
    "cc", "mark", "aux", "cop", "nmod", "appos", "conj", "clf", "dep",
})


class Tagger(Protocol):
    id: str

    def tag(self, sentence: str) -> list[tuple[str, str, str]]: ...


class EntityRecognizer(Protocol):
    id: str
    labels: frozenset

    def recognize(self, text: str, sentence: Optional[str] = None) -> Optional[str]: ...


class LexiconTagger:
    """Context-free tagger backed by a ``token<TAB>upos<TAB>deprel`` table.

    Unknown tokens: digit strings and number words are NUM/nummod,
    punctuation is PUNCT/punct, capitalized words PROPN, everything else
    falls back to ``default``.
    """

    concurrent_safe = True

    def __init__(self, table: dict, id: str = "lexicon-tagger", default=("NOUN", "dep")):
        self.table = {normalize_text(k).casefold(): tuple(v) for k, v in table.items()}
        self.id = id
        self.default = tuple(default)

    @classmethod
    def from_file(cls, path, **kwargs) -> "LexiconTagger":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{line_no}: expected token<TAB>upos<TAB>deprel")
                table[parts[0]] = (parts[1], parts[2])
        return cls(table, **kwargs)

    def tag_token(self, tok: str) -> tuple[str, str]:
        key = tok.casefold()
        if key in self.table:
            return self.table[key]
        if _DIGITS_ONLY.fullmatch(tok) or parse_number_words([tok], "en") is not None \
                or parse_number_words([tok], "fa") is not None:
            return ("NUM", "nummod")
        if not (tok[0].isalnum() or tok[0] == "_"):
            return ("PUNCT", "punct")
        if tok[0].isupper():
            return ("PROPN", self.default[1])
        return self.default

    def tag(self, sentence: str) -> list[tuple[str, str, str]]:
        return [(tok, *self.tag_token(tok)) for tok, _, _ in tokenize(sentence)]


class LexiconRecognizer:
    """Entity labels from a ``surface<TAB>LABEL`` table; unknown -> None."""

    concurrent_safe = True

    def __init__(self, table: dict, id: str = "lexicon-ner"):
        self.table = {normalize_text(k).casefold(): v for k, v in table.items()}
        self.labels = frozenset(self.table.values())
        self.id = id

    @classmethod
    def from_file(cls, path, **kwargs) -> "LexiconRecognizer":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{line_no}: expected surface<TAB>LABEL")
                table[parts[0]] = parts[1].strip()
        return cls(table, **kwargs)

    def recognize(self, text: str, sentence: Optional[str] = None) -> Optional[str]:
        return self.table.get(normalize_text(text).casefold())


class ExternalTagger:
    """Request ``{"sentence"}``, response ``{"tokens": [[token, upos, deprel], ...]}``."""

    def __init__(self, transport, id: str = "external-tagger", attempts: int = 3):
        self.transport = transport
        self.id = id
        self.attempts = attempts
        self.concurrent_safe = transport.concurrent_safe

    def tag(self, sentence: str) -> list[tuple[str, str, str]]:
        resp = with_retries(lambda: self.transport.request({"sentence": sentence}), attempts=self.attempts)
        try:
            return [(str(t), str(u), str(d)) for t, u, d in resp["tokens"]]
        except (KeyError, TypeError, ValueError):
            raise TaggerError(f"{self.id}: malformed response") from None


class ExternalRecognizer:
    """Request ``{"text", "sentence"}``, response ``{"label": str | null}``."""

    def __init__(self, transport, labels: Sequence[str], id: str = "external-ner", attempts: int = 3):
        self.transport = transport
        self.labels = frozenset(labels)
        self.id = id
        self.attempts = attempts
        self.concurrent_safe = transport.concurrent_safe

    def recognize(self, text: str, sentence: Optional[str] = None) -> Optional[str]:
        resp = with_retries(lambda: self.transport.request({"text": text, "sentence": sentence}),
                            attempts=self.attempts)
        label = resp.get("label")
        if label is not None and label not in self.labels:
            raise NERError(f"{self.id}: label {label!r} outside declared set")
        return label


# -- answer profile ------------------------------------------------------------------

class Category(str, enum.Enum):
    NUMBERS = "NUMBERS"
    OTHERS = "OTHERS"
    ENTITY = "ENTITY"


@dataclass(frozen=True)
class AnswerProfile:
    upos: str
    deprel: str
    entity: Optional[str]
    category: Category

    def __post_init__(self):
        if self.category is Category.ENTITY and self.entity is None:
            raise ValueError("ENTITY category needs an entity label")


def is_digits(text: str) -> bool:
    return bool(_DIGITS_ONLY.fullmatch(normalize_text(normalize_written_form(text))))


def span_head(tagger: Tagger, s: AnswerSentence) -> tuple[str, str]:
    """(upos, deprel) of the head token among those overlapping the answer span."""
    try:
        tokens = tagger.tag(s.text)
    except BackendError as exc:
        raise TaggerError(str(exc)) from exc
    except Exception as exc:  # noqa: BLE001
        raise TaggerError(f"{tagger.id}: {exc}") from exc
    cursor = 0
    inside = []
    for tok, upos, deprel in tokens:
        idx = s.text.find(tok, cursor)
        if idx < 0:
            raise TaggerError(f"{tagger.id}: token {tok!r} does not align with {s.text!r}")
        end = idx + len(tok)
        cursor = end
        if idx < s.end and end > s.start:
            inside.append((upos, deprel))
    if not inside:
        raise TaggerError(f"{tagger.id}: no token covers the answer span in {s.text!r}")
    for upos, deprel in inside:
        if deprel.split(":")[0] not in NON_HEAD_DEPRELS:
            return upos, deprel
    return inside[-1]


def _recognize(ner: EntityRecognizer, text: str, sentence: Optional[str]) -> Optional[str]:
    try:
        return ner.recognize(text, sentence)
    except NERError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise NERError(f"{ner.id}: {exc}") from exc


def profile_answer(s: AnswerSentence, tagger: Tagger, ner: EntityRecognizer) -> AnswerProfile:
    upos, deprel = span_head(tagger, s)
    entity = _recognize(ner, s.answer, s.text)
    if is_digits(s.answer):
        category = Category.NUMBERS
    elif entity is None:
        category = Category.OTHERS
    else:
        category = Category.ENTITY
    return AnswerProfile(upos, deprel, entity, category)


# -- stages ----------------------------------------------------------------------------

def _reject(c: Candidate, stage: FilterStage, reason: str) -> Candidate:
    return dataclasses.replace(c, rejections=c.rejections + (FilterVerdict(stage, False, reason),))


def pos_filter(cands, s: AnswerSentence, profile: AnswerProfile, tagger: Tagger,
               rejected: Optional[list] = None, cache: Optional[dict] = None) -> list[Candidate]:
    """Keep candidates whose head (upos, deprel) in the substituted sentence matches the answer's."""
    kept = []
    for c in cands:
        key = c.surface
        if cache is not None and key in cache:
            tags = cache[key]
        else:
            tags = span_head(tagger, s.substitute(c.surface))
            if cache is not None:
                cache[key] = tags
        upos, deprel = tags
        if upos != profile.upos:
            reason = f"upos {upos}≠{profile.upos}"
        elif deprel != profile.deprel:
            reason = f"deprel {deprel}≠{profile.deprel}"
        else:
            kept.append(c)
            continue
        if rejected is not None:
            rejected.append(_reject(c, FilterStage.POS, reason))
    return kept


def written_form_stage(cands) -> list[Candidate]:
    """Rewrite number words as digits; never rejects."""
    out = []
    for c in cands:
        surface = normalize_text(normalize_written_form(c.surface))
        out.append(c if surface == c.surface else dataclasses.replace(c, surface=surface))
    return out


def ner_filter(cands, profile: AnswerProfile, ner: EntityRecognizer, sentence: Optional[str] = None,
               rejected: Optional[list] = None, check_entities: bool = True) -> list[Candidate]:
    """Entity-type agreement; digits-only for numeric answers; OTHERS passes through.

    ``check_entities=False`` relaxes the entity-label test but keeps the
    digits-only rule for numeric answers.
    """
    if profile.category is Category.OTHERS:
        return list(cands)
    kept = []
    for c in cands:
        if profile.category is Category.NUMBERS:
            ok = is_digits(c.surface)
            reason = "" if ok else "not digits-only"
        elif not check_entities:
            ok, reason = True, ""
        else:
            label = _recognize(ner, c.surface, sentence)
            ok = label == profile.entity
            reason = "" if ok else f"entity {label or 'NONE'}≠{profile.entity}"
        if ok:
            kept.append(c)
        elif rejected is not None:
            rejected.append(_reject(c, FilterStage.NER, reason))
    return kept


def dedupe_stage(cands, answer: str, rejected: Optional[list] = None) -> list[Candidate]:
    """Drop candidates equal to the answer or to an earlier candidate."""
    answer_keys = {normalize_text(answer), normalize_text(normalize_written_form(answer))}
    seen: dict[str, str] = {}
    kept = []
    for c in cands:
        key = normalize_text(normalize_written_form(c.surface))
        if key in answer_keys or c.key in answer_keys:
            reason = "same as answer"
        elif key in seen:
            reason = f"duplicate of {seen[key]!r}"
        else:
            seen[key] = c.surface
            kept.append(c)
            continue
        if rejected is not None:
            rejected.append(_reject(c, FilterStage.DEDUPE, reason))
    return kept


@dataclass
class FilterStats:
    """Per-stage counts and rejected candidates, accumulated over items."""

    stage_in: Counter = field(default_factory=Counter)
    stage_out: Counter = field(default_factory=Counter)
    stage_rejected: Counter = field(default_factory=Counter)
    relaxations: int = 0
    rejected: list = field(default_factory=list)

    def record(self, stage: FilterStage, n_in: int, n_out: int, rejected: list) -> None:
        self.stage_in[stage.value] += n_in
        self.stage_out[stage.value] += n_out
        self.stage_rejected[stage.value] += len(rejected)
        self.rejected.extend(rejected)

    def merge(self, other: "FilterStats") -> None:
        self.stage_in.update(other.stage_in)
        self.stage_out.update(other.stage_out)
        self.stage_rejected.update(other.stage_rejected)
        self.relaxations += other.relaxations
        self.rejected.extend(other.rejected)

    def to_json(self) -> dict:
        stages = [s.value for s in FilterStage]
        return {
            "stages": {s: {"in": self.stage_in[s], "out": self.stage_out[s],
                           "rejected": self.stage_rejected[s]} for s in stages},
            "relaxations": self.relaxations,
        }


def _run_once(cands, s, profile, tagger, ner, dropped, cache):
    stats = FilterStats()
    current = list(cands)
    for stage in (FilterStage.POS, FilterStage.WRITTEN_FORM, FilterStage.NER, FilterStage.DEDUPE):
        rejected: list = []
        n_in = len(current)
        if stage is FilterStage.POS:
            if stage not in dropped:
                current = pos_filter(current, s, profile, tagger, rejected, cache)
        elif stage is FilterStage.WRITTEN_FORM:
            if stage not in dropped:
                current = written_form_stage(current)
        elif stage is FilterStage.NER:
            current = ner_filter(current, profile, ner, s.text, rejected,
                                 check_entities=stage not in dropped)
        else:
            current = dedupe_stage(current, s.answer, rejected)
        stats.record(stage, n_in, len(current), rejected)
    return current, stats


def run_filters(cands, s: AnswerSentence, profile: AnswerProfile, cfg: PipelineConfig,
                tagger: Tagger, ner: EntityRecognizer,
                stats: Optional[FilterStats] = None) -> tuple[list[Candidate], bool]:
    """Run the stack; relax per ``cfg.relaxation_policy`` on shortage.

    Returns ``(survivors, relaxed)``. ``stats``, when given, receives the
    counts and rejections of the attempt whose survivors are returned.
    """
    cache: dict = {}
    dropped: set = set()
    survivors, attempt = _run_once(cands, s, profile, tagger, ner, dropped, cache)
    relaxed = False
    for stage in cfg.relaxation_policy:
        if len(survivors) >= cfg.distractor_count:
            break
        dropped.add(FilterStage(stage))
        relaxed = True
        survivors, attempt = _run_once(cands, s, profile, tagger, ner, dropped, cache)
    if stats is not None:
        attempt.relaxations = int(relaxed)
        stats.merge(attempt)
    return survivors, relaxed
