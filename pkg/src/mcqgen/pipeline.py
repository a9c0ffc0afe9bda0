"""End-to-end generation: QA records in, MCQ items out, with a run manifest."""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .candidates import (AnswerSentence, ExternalFillMask, StaticFillMask, VocabularyFillMask,
                         WordVectorTable, build_answer_sentence, embedding_candidates,
                         fillmask_candidates, locate_answer, mask_answer, merge_pool)
from .core import Flag, MCQItem, PipelineConfig, QARecord, normalize_text
from .errors import BackendError, ConfigError, MCQError
from .filters import (ExternalRecognizer, ExternalTagger, FilterStats, LexiconRecognizer,
                      LexiconTagger, profile_answer, run_filters)
from .kg import ComplexEmbedding
from .qgen import ExternalQG, TemplateQG, generate_question
from .ranking import (ExternalEncoder, HashingEncoder, TransformersEncoder, assemble_mcq,
                      score_candidates, select_top)
from .taxonomy import QuestionWordLexicon, classify_type
from .transport import make_transport, with_retries

log = logging.getLogger(__name__)

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?؟])\s+")


class Serialized:
    """Proxy that funnels every method call on ``target`` through one lock."""

    concurrent_safe = True

    def __init__(self, target):
        self._target = target
        self._lock = threading.Lock()

    def __getattr__(self, name):
        attr = getattr(self._target, name)
        if not callable(attr):
            return attr

        def locked(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return locked


def _guard(backend):
    if backend is None or getattr(backend, "concurrent_safe", False):
        return backend
    return Serialized(backend)


def context_sentence_builder(context: str) -> Callable[[str, str], str]:
    """Answer-sentence builder that returns the context sentence holding the answer."""

    def build(question: str, answer: str) -> str:
        for sent in _SENTENCE_SPLIT.split(normalize_text(context)):
            try:
                locate_answer(sent, answer)
                return sent.rstrip(" .!?؟")
            except MCQError:
                continue
        return ""

    return build


class ExternalSentenceBuilder:
    """Request ``{"question", "answer"}``, response ``{"sentence"}``."""

    def __init__(self, transport, attempts: int = 3):
        self.transport = transport
        self.attempts = attempts
        self.concurrent_safe = transport.concurrent_safe

    def __call__(self, question: str, answer: str) -> str:
        resp = with_retries(lambda: self.transport.request({"question": question, "answer": answer}),
                            attempts=self.attempts)
        sent = resp.get("sentence")
        if not isinstance(sent, str):
            raise BackendError("sentence builder response lacks 'sentence'")
        return sent


@dataclass
class Components:
    qgen: object = field(default_factory=TemplateQG)
    bypass_qgen: bool = True
    sep_token: str = "[SEP]"
    sentence_mode: str = "template"
    sentence_builder: Optional[Callable[[str, str], str]] = None
    lexicon: QuestionWordLexicon = field(default_factory=lambda: QuestionWordLexicon.builtin("en"))
    fillmask: list = field(default_factory=list)
    tables: list = field(default_factory=list)
    tagger: object = None
    ner: object = None
    encoder: object = field(default_factory=HashingEncoder)
    kg: Optional[ComplexEmbedding] = None
    keep_incomplete: bool = False

    def guarded(self) -> "Components":
        c = Components(**self.__dict__)
        c.qgen = _guard(self.qgen)
        c.fillmask = [_guard(b) for b in self.fillmask]
        c.tagger = _guard(self.tagger)
        c.ner = _guard(self.ner)
        c.encoder = _guard(self.encoder)
        if self.sentence_builder is not None:
            c.sentence_builder = _guard(self.sentence_builder)
        return c


def build_components(cfg: dict) -> Components:
    """Instantiate every backend named in a loaded config."""
    try:
        comp = Components()
        p = cfg["pipeline"]
        comp.bypass_qgen = bool(p.get("bypass_question_gen", True))
        comp.keep_incomplete = bool(p.get("keep_incomplete", False))

        q = cfg["qgen"]
        comp.sep_token = q.get("sep_token", "[SEP]")
        if q["backend"] == "external":
            comp.qgen = ExternalQG(make_transport(q), id=q.get("id", "external"))
        elif q["backend"] != "template":
            raise ConfigError(f"unknown qgen backend {q['backend']!r}")

        a = cfg["answer_sentence"]
        comp.sentence_mode = a["backend"]
        if a["backend"] == "external":
            comp.sentence_builder = ExternalSentenceBuilder(make_transport(a))
        elif a["backend"] not in ("template", "context"):
            raise ConfigError(f"unknown answer_sentence backend {a['backend']!r}")

        lex = cfg["taxonomy"]["lexicon"]
        comp.lexicon = QuestionWordLexicon.builtin(lex) if lex in ("en", "fa") else QuestionWordLexicon.from_file(lex)

        for fm in cfg["fillmask"]:
            kind = fm.get("backend")
            mask = fm.get("mask_token", "<mask>")
            fid = fm.get("id", kind)
            if kind == "vocabulary":
                comp.fillmask.append(VocabularyFillMask.from_file(fm["words"], id=fid, mask_token=mask))
            elif kind == "static":
                with open(fm["predictions"], encoding="utf-8") as fh:
                    preds = json.load(fh)
                comp.fillmask.append(StaticFillMask(preds, id=fid, mask_token=mask))
            elif kind == "external":
                comp.fillmask.append(ExternalFillMask(make_transport(fm), id=fid, mask_token=mask))
            else:
                raise ConfigError(f"unknown fillmask backend {kind!r}")

        for emb in cfg["embeddings"]:
            comp.tables.append(WordVectorTable.load(emb["path"], emb.get("id")))

        t = cfg["tagger"]
        if t["backend"] == "lexicon":
            comp.tagger = LexiconTagger.from_file(t["path"]) if t.get("path") else LexiconTagger({})
        elif t["backend"] == "external":
            comp.tagger = ExternalTagger(make_transport(t), id=t.get("id", "external-tagger"))
        else:
            raise ConfigError(f"unknown tagger backend {t['backend']!r}")

        n = cfg["ner"]
        if n["backend"] == "lexicon":
            comp.ner = LexiconRecognizer.from_file(n["path"]) if n.get("path") else LexiconRecognizer({})
        elif n["backend"] == "external":
            comp.ner = ExternalRecognizer(make_transport(n), n.get("labels", []), id=n.get("id", "external-ner"))
        else:
            raise ConfigError(f"unknown ner backend {n['backend']!r}")

        e = cfg["encoder"]
        if e["backend"] == "hashing":
            comp.encoder = HashingEncoder(dim=int(e.get("dim", 64)))
        elif e["backend"] == "transformers":
            comp.encoder = TransformersEncoder(e["model"], layer=int(e.get("layer", 2)))
        elif e["backend"] == "external":
            comp.encoder = ExternalEncoder(make_transport(e), dim=int(e["dim"]))
        elif e["backend"] in (None, "none"):
            comp.encoder = None
        else:
            raise ConfigError(f"unknown encoder backend {e['backend']!r}")

        if cfg["kg"].get("embeddings"):
            comp.kg = ComplexEmbedding.load(cfg["kg"]["embeddings"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return comp


STAGES = ("question", "answer_sentence", "candidates", "filters", "ranking", "assemble")


@dataclass
class ItemResult:
    record_id: str
    item: Optional[MCQItem] = None
    error: Optional[MCQError] = None
    pool_size: int = 0
    relaxed: bool = False
    stats: FilterStats = field(default_factory=FilterStats)
    audit: list = field(default_factory=list)
    timings: dict = field(default_factory=lambda: defaultdict(float))


def process_record(rec: QARecord, comp: Components, cfg: PipelineConfig) -> ItemResult:
    """Run one record through every stage; stage errors are captured, not raised."""
    res = ItemResult(rec.id)
    clock = time.perf_counter

    def timed(stage, fn, *args, **kwargs):
        t0 = clock()
        try:
            return fn(*args, **kwargs)
        finally:
            res.timings[stage] += clock() - t0

    try:
        question = timed("question", generate_question, comp.qgen, rec, comp.bypass_qgen, comp.sep_token)
        builder = comp.sentence_builder
        if comp.sentence_mode == "context":
            builder = context_sentence_builder(rec.context)
        sentence: AnswerSentence = timed("answer_sentence", build_answer_sentence,
                                         question, rec.answer, builder, comp.lexicon)

        def gather():
            lists = []
            for fm in comp.fillmask:
                masked = mask_answer(sentence, fm.mask_token)
                lists.append(fillmask_candidates(fm, masked, cfg.fillmask_top_k, rec.answer))
            for table in comp.tables:
                lists.append(embedding_candidates(table, rec.answer, cfg.embedding_top_k))
            return merge_pool(lists, rec.answer)

        pool = timed("candidates", gather)
        res.pool_size = len(pool)

        def filt():
            profile = profile_answer(sentence, comp.tagger, comp.ner)
            return run_filters(pool, sentence, profile, cfg, comp.tagger, comp.ner, res.stats)

        survivors, res.relaxed = timed("filters", filt)

        def rank():
            scored = score_candidates(survivors, sentence, rec.answer, comp.encoder, comp.kg, cfg.fusion_weights)
            return scored, select_top(scored, cfg.distractor_count)

        scored, top = timed("ranking", rank)
        res.audit = [(rec.id, c) for c in scored] + [(rec.id, c) for c in res.stats.rejected]
        qtype = classify_type(question, comp.lexicon)
        res.item = timed("assemble", assemble_mcq, rec, question, top, cfg, res.relaxed, qtype)
    except MCQError as exc:
        res.error = exc
    return res


@dataclass
class RunResult:
    items: list
    manifest: dict
    audit: list


def run_pipeline(records: Sequence[QARecord], comp: Components, cfg: PipelineConfig,
                 workers: int = 1, fail_fast: bool = False) -> RunResult:
    """Process records on a worker pool; output keeps input order."""
    comp = comp.guarded() if workers > 1 else comp
    started = time.perf_counter()
    results = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        stream = (pool.map(lambda r: process_record(r, comp, cfg), records) if pool
                  else (process_record(r, comp, cfg) for r in records))
        for res in stream:
            if fail_fast and res.error is not None:
                raise res.error
            results.append(res)
    finally:
        if pool:
            pool.shutdown(cancel_futures=True)

    items, audit = [], []
    stats = FilterStats()
    errors: Counter = Counter()
    timings: Counter = Counter()
    incomplete_dropped = relaxed = pool_total = 0
    for res in results:
        timings.update(res.timings)
        audit.extend(res.audit)
        pool_total += res.pool_size
        if res.error is not None:
            log.warning("record %s skipped: %s", res.record_id, res.error)
            errors[res.error.code] += 1
            continue
        stats.merge(res.stats)
        relaxed += res.relaxed
        if Flag.INCOMPLETE_DISTRACTORS in res.item.flags and not comp.keep_incomplete:
            incomplete_dropped += 1
            continue
        items.append(res.item)

    manifest = {
        "counts": {
            "records_in": len(records),
            "items_out": len(items),
            "skipped_errors": sum(errors.values()),
            "errors_by_code": dict(sorted(errors.items())),
            "incomplete_dropped": incomplete_dropped,
            "relaxed_items": relaxed,
            "candidates_generated": pool_total,
            "filters": stats.to_json()["stages"],
            "relaxations": stats.relaxations,
        },
        "seconds": {"total": time.perf_counter() - started,
                    **{s: timings.get(s, 0.0) for s in STAGES}},
        "workers": workers,
    }
    return RunResult(items, manifest, audit)


def manifest_reconciles(manifest: dict) -> bool:
    c = manifest["counts"]
    ok = c["records_in"] == c["items_out"] + c["skipped_errors"] + c["incomplete_dropped"]
    for stage in c["filters"].values():
        ok &= stage["in"] == stage["out"] + stage["rejected"]
    return bool(ok)
