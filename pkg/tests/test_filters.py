import pytest
from hypothesis import given, settings, strategies as st

from mcqgen.candidates import AnswerSentence, locate_answer
from mcqgen.core import FilterStage, PipelineConfig
from mcqgen.errors import NERError, TaggerError
from mcqgen.filters import (AnswerProfile, Category, FilterStats, LexiconRecognizer, LexiconTagger,
                            dedupe_stage, is_digits, ner_filter, pos_filter, profile_answer, run_filters,
                            span_head, written_form_stage)

from conftest import FIXTURES, cand


@pytest.fixture(scope="module")
def tagger():
    return LexiconTagger.from_file(FIXTURES / "tagger.tsv")


@pytest.fixture(scope="module")
def ner():
    return LexiconRecognizer.from_file(FIXTURES / "ner.tsv")


def surfaces(cs):
    return [c.surface for c in cs]


# -- profile -----------------------------------------------------------------------

def test_profile_numbers(tagger, ner):
    p = profile_answer(locate_answer("It ended in 1969", "1969"), tagger, ner)
    assert p.category is Category.NUMBERS and p.upos == "NUM"


def test_profile_entity(tagger):
    p = profile_answer(locate_answer("Tehran is big", "Tehran"), tagger, LexiconRecognizer({"Tehran": "LOC"}))
    assert p.category is Category.ENTITY and p.entity == "LOC"


def test_profile_others(tagger, ner):
    p = profile_answer(locate_answer("she ran quickly", "quickly"), tagger, ner)
    assert p.category is Category.OTHERS and p.entity is None


def test_entity_profile_requires_label():
    with pytest.raises(ValueError):
        AnswerProfile("NOUN", "obl", None, Category.ENTITY)


def test_span_head_skips_modifiers(tagger):
    s = locate_answer("she visited the great Paris", "the great Paris")
    assert span_head(tagger, s) == ("PROPN", "dep")


def test_span_head_misaligned_tagger():
    class Bad:
        id = "bad"

        def tag(self, sentence):
            return [("zzz", "NOUN", "obj")]

    with pytest.raises(TaggerError):
        span_head(Bad(), AnswerSentence("abc", 0, 3))


# -- POS ----------------------------------------------------------------------------

def test_pos_rejects_mismatched_tag(tagger):
    s = locate_answer("she went to school yesterday", "yesterday")
    profile = profile_answer(s, tagger, LexiconRecognizer({}))
    assert (profile.upos, profile.deprel) == ("NOUN", "obl")
    rejected = []
    assert pos_filter([cand("fast")], s, profile, tagger, rejected) == []
    assert rejected[0].rejections[-1].stage is FilterStage.POS
    assert "ADV" in rejected[0].rejections[-1].reason


def test_pos_keeps_matching(tagger):
    s = locate_answer("she left fast", "fast")
    profile = AnswerProfile("ADV", "advmod", None, Category.OTHERS)
    assert surfaces(pos_filter([cand("fast"), cand("yesterday")], s, profile, tagger)) == ["fast"]
    assert pos_filter([], s, profile, tagger) == []


# -- written form / NER / dedupe ----------------------------------------------------

def test_written_form_rewrites_never_rejects():
    out = written_form_stage([cand("twelve"), cand("dozen"), cand("12")])
    assert surfaces(out) == ["12", "dozen", "12"]


def test_numbers_rule_with_dedupe():
    profile = AnswerProfile("NUM", "nummod", None, Category.NUMBERS)
    rejected = []
    kept = ner_filter(written_form_stage([cand("12"), cand("twelve"), cand("dozen")]), profile,
                      LexiconRecognizer({}), rejected=rejected)
    assert surfaces(kept) == ["12", "12"]
    assert surfaces(dedupe_stage(kept, "7")) == ["12"]
    assert surfaces(rejected) == ["dozen"]


def test_ner_label_mismatch(ner):
    profile = AnswerProfile("PROPN", "nsubj", "PERSON", Category.ENTITY)
    rejected = []
    assert surfaces(ner_filter([cand("Paris"), cand("Newton")], profile, ner, rejected=rejected)) == ["Newton"]
    assert "GPE" in rejected[0].rejections[-1].reason


def test_ner_others_passthrough(ner):
    cs = [cand("x"), cand("Paris")]
    assert ner_filter(cs, AnswerProfile("NOUN", "obj", None, Category.OTHERS), ner) == cs


def test_ner_relaxed_keeps_digits_rule():
    num = AnswerProfile("NUM", "nummod", None, Category.NUMBERS)
    assert surfaces(ner_filter([cand("5"), cand("five stars")], num, None, check_entities=False)) == ["5"]
    ent = AnswerProfile("PROPN", "nsubj", "PERSON", Category.ENTITY)
    assert surfaces(ner_filter([cand("Paris")], ent, None, check_entities=False)) == ["Paris"]


def test_ner_undeclared_label_from_external():
    from mcqgen.filters import ExternalRecognizer

    class T:
        concurrent_safe = True

        def request(self, payload):
            return {"label": "ALIEN"}

    with pytest.raises(NERError):
        ExternalRecognizer(T(), ["PER"]).recognize("x")


def test_dedupe_against_answer_written_form():
    rejected = []
    out = dedupe_stage([cand("two"), cand("2"), cand("3")], "2", rejected)
    assert surfaces(out) == ["3"]
    assert [r.rejections[-1].reason for r in rejected] == ["same as answer", "same as answer"]


def test_is_digits():
    assert is_digits("1969") and is_digits("twenty one") and is_digits("۱۲")
    assert not is_digits("9 1") and not is_digits("12a") and not is_digits("")


# -- full stack and relaxation --------------------------------------------------------

class TableTagger:
    """Tags each whole token from a dict; no fallbacks."""

    id = "table"

    def __init__(self, table):
        self.table = table

    def tag(self, sentence):
        return [(tok, *self.table[tok]) for tok in sentence.split()]


def _sentence():
    return AnswerSentence("ans here", 0, 3)


def test_run_filters_no_shortage():
    table = {"ans": ("NOUN", "nsubj"), "here": ("ADV", "advmod")}
    good = [f"g{i}" for i in range(5)]
    bad = [f"b{i}" for i in range(5)]
    table.update({w: ("NOUN", "nsubj") for w in good})
    table.update({w: ("VERB", "root") for w in bad})
    profile = AnswerProfile("NOUN", "nsubj", None, Category.OTHERS)
    survivors, relaxed = run_filters([cand(w) for w in good + bad], _sentence(), profile,
                                     PipelineConfig(), TableTagger(table), None)
    assert (len(survivors), relaxed) == (5, False)


def test_run_filters_relaxes_pos():
    table = {"ans": ("NOUN", "nsubj"), "here": ("ADV", "advmod")}
    words = [f"w{i}" for i in range(10)]
    for i, w in enumerate(words):
        table[w] = ("NOUN", "nsubj") if i < 2 else ("VERB", "root")
    ner = LexiconRecognizer({w: "PER" for w in words[:4]} | {"ans": "PER"})
    profile = AnswerProfile("NOUN", "nsubj", "PER", Category.ENTITY)
    stats = FilterStats()
    survivors, relaxed = run_filters([cand(w) for w in words], _sentence(), profile,
                                     PipelineConfig(), TableTagger(table), ner, stats)
    assert (surfaces(survivors), relaxed) == (words[:4], True)
    assert stats.relaxations == 1
    # counts describe the relaxed attempt: POS was skipped, NER removed the six non-persons
    assert (stats.stage_in["POS"], stats.stage_out["POS"]) == (10, 10)
    assert stats.stage_rejected["NER"] == 6


def test_run_filters_exhaustion():
    profile = AnswerProfile("NUM", "nummod", None, Category.NUMBERS)
    tagger = TableTagger({"ans": ("NUM", "nummod"), "here": ("ADV", "advmod"), "word": ("NOUN", "obj")})
    survivors, relaxed = run_filters([cand("word")], _sentence(), profile, PipelineConfig(), tagger, None)
    assert survivors == [] and relaxed


_words = st.sampled_from(["Paris", "Newton", "twelve", "12", "flour", "dozen", "two", "2", "Tesla", "salt"])


@settings(max_examples=150, deadline=None)
@given(st.lists(_words, max_size=12), st.sampled_from(["Curie", "1889", "flour", "Paris"]),
       st.integers(1, 6))
def test_stack_subset_and_reconciliation(words, answer, need):
    tagger = LexiconTagger.from_file(FIXTURES / "tagger.tsv")
    ner = LexiconRecognizer.from_file(FIXTURES / "ner.tsv")
    s = locate_answer(f"{answer} is here", answer)
    profile = profile_answer(s, tagger, ner)
    pool = [cand(w) for w in dict.fromkeys(words)]
    stats = FilterStats()
    survivors, _ = run_filters(pool, s, profile, PipelineConfig(distractor_count=need), tagger, ner, stats)
    from mcqgen.numwords import normalize_written_form
    allowed = {normalize_written_form(c.surface) for c in pool}
    assert all(c.surface in allowed for c in survivors)
    for stage in ("POS", "WRITTEN_FORM", "NER", "DEDUPE"):
        assert stats.stage_in[stage] == stats.stage_out[stage] + stats.stage_rejected[stage]
    assert len(stats.rejected) == sum(stats.stage_rejected.values())
    if profile.category is Category.NUMBERS:
        assert all(is_digits(c.surface) and c.surface.isdigit() for c in survivors)
