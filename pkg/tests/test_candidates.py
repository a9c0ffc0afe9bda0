import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcqgen.candidates import (AnswerSentence, StaticFillMask, VocabularyFillMask, WordVectorTable,
                               build_answer_sentence, embedding_candidates, fillmask_candidates,
                               locate_answer, mask_answer, merge_pool)
from mcqgen.core import ProvenanceKind
from mcqgen.errors import AnswerNotLocated, BackendError, MultipleMasksError, NoMaskError

from conftest import StubFillMask, cand


# -- answer sentence ---------------------------------------------------------------

def test_fallback_sentence():
    s = build_answer_sentence("Who wrote Hamlet?", "Shakespeare")
    assert s.text == "Shakespeare wrote Hamlet"
    assert s.answer == "Shakespeare"


def test_fallback_prefers_longest_interrogative():
    s = build_answer_sentence("How many legs does a spider have?", "eight")
    assert s.text == "eight legs does a spider have"


def test_fallback_without_interrogative_appends():
    s = build_answer_sentence("The capital of Iran is", "Tehran")
    assert s.text == "The capital of Iran is Tehran" and s.answer == "Tehran"


def test_builder_without_answer():
    with pytest.raises(AnswerNotLocated) as ei:
        build_answer_sentence("q?", "Tehran", builder=lambda q, a: "Nothing here")
    assert ei.value.code == "ANSWER_NOT_LOCATED"


def test_builder_output_equal_to_answer():
    s = build_answer_sentence("q?", "Tehran is big", builder=lambda q, a: a)
    assert (s.start, s.end) == (0, len("Tehran is big"))


def test_locate_answer_case_and_space_insensitive():
    s = locate_answer("We met in  new   york today", "New York")
    assert s.answer == "new   york"


# -- masking -----------------------------------------------------------------------

def test_mask_answer_examples():
    assert mask_answer(AnswerSentence("Tehran is the capital", 0, 6), "<MASK>") == "<MASK> is the capital"
    assert mask_answer(AnswerSentence("Tehran", 0, 6), "<MASK>") == "<MASK>"
    s = locate_answer("Tehran is the capital", "the capital")
    assert mask_answer(s, "<MASK>") == "Tehran is <MASK>"


def test_substitute_moves_span():
    s = AnswerSentence("Tehran is the capital", 0, 6).substitute("Shiraz city")
    assert s.answer == "Shiraz city" and s.text == "Shiraz city is the capital"


# -- fill-mask ---------------------------------------------------------------------

def test_fillmask_drops_answer_then_truncates():
    fm = StubFillMask([("Paris", 0.4), ("Tehran", 0.3), ("Lyon", 0.2)])
    out = fillmask_candidates(fm, "<mask> is big", 2, "Tehran")
    assert [c.surface for c in out] == ["Paris", "Lyon"]
    assert fm.calls == [("<mask> is big", 3)]
    assert all(c.provenance.kind is ProvenanceKind.FILL_MASK for c in out)


def test_fillmask_k_larger_than_list():
    fm = StubFillMask([("Paris", 0.4), ("Tehran", 0.3), ("Lyon", 0.2)])
    assert [c.surface for c in fillmask_candidates(fm, "<mask>", 10, "Tehran")] == ["Paris", "Lyon"]


def test_fillmask_mask_count_checks():
    fm = StubFillMask([])
    with pytest.raises(NoMaskError):
        fillmask_candidates(fm, "no slot", 2, "x")
    with pytest.raises(MultipleMasksError):
        fillmask_candidates(fm, "<mask> <mask>", 2, "x")


@pytest.mark.parametrize("preds", [[("a", 0.1), ("b", 0.2)], [("a", float("nan"))]])
def test_fillmask_rejects_bad_predictions(preds):
    with pytest.raises(BackendError):
        fillmask_candidates(StubFillMask(preds), "<mask>", 2, "x")


def test_vocabulary_fillmask_deterministic_and_sorted():
    fm = VocabularyFillMask(["a", "b", "c", "d"])
    p1 = fm.predict("x <mask>", 4)
    assert p1 == fm.predict("x <mask>", 4)
    assert [s for _, s in p1] == sorted((s for _, s in p1), reverse=True)
    assert sorted(w for w, _ in p1) == ["a", "b", "c", "d"]


def test_static_fillmask_lookup():
    fm = StaticFillMask({"<mask> x": [["a", 0.9], ["b", 0.1]]}, default=[("z", 0.5)])
    assert fm.predict("<mask> x", 1) == [["a", 0.9]]
    assert fm.predict("other", 3) == [("z", 0.5)]


# -- static embeddings -------------------------------------------------------------

def _table():
    return WordVectorTable("t", ["a", "b", "c"], [[1, 0], [1, 0.01], [0, 1]])


def test_embedding_nearest():
    assert [c.surface for c in embedding_candidates(_table(), "a", 1)] == ["b"]
    assert [c.surface for c in embedding_candidates(_table(), "a", 2)] == ["b", "c"]
    top = embedding_candidates(_table(), "a", 1)[0]
    assert top.generator_score == pytest.approx(1 / np.sqrt(1 + 0.01 ** 2))


def test_embedding_oov():
    assert embedding_candidates(_table(), "zzz", 3) == []


def test_table_load_with_header(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("2 3\nx 1 0 0\ny 0 1 0\n")
    t = WordVectorTable.load(p, "v")
    assert len(t) == 2 and t.dim == 3
    p.write_text("x 1 0 0\ny 0 1\n")
    with pytest.raises(ValueError):
        WordVectorTable.load(p)


def test_table_rejects_normalized_duplicates():
    with pytest.raises(ValueError):
        WordVectorTable("t", ["۱", "1"], [[1.0], [2.0]])


# -- pool merge --------------------------------------------------------------------

def test_merge_pool_dedupes_keeping_best():
    a = [cand("x", 0.9), cand("y", 0.2)]
    b = [cand("y", 0.8), cand("z", 0.1)]
    out = merge_pool([a, b], "answer")
    assert [c.surface for c in out] == ["x", "y", "z"]
    assert [c.generator_score for c in out if c.surface == "y"] == [0.8]


def test_merge_pool_fillmask_beats_embedding():
    emb = [cand("y", 0.99, kind=ProvenanceKind.STATIC_EMBEDDING)]
    fm = [cand("y", 0.1)]
    (only,) = merge_pool([emb, fm], "q")
    assert only.provenance.kind is ProvenanceKind.FILL_MASK


def test_merge_pool_empty_and_answer_excluded():
    assert merge_pool([[], []], "a") == []
    assert [c.surface for c in merge_pool([[cand("Tehran"), cand("Paris")]], " Tehran ")] == ["Paris"]


_surfaces = st.sampled_from(["a", "b", "c", "d", "e", " a", "۱", "1"])


@given(st.lists(st.lists(st.tuples(_surfaces, st.floats(0, 1), st.booleans()), max_size=6), max_size=4))
def test_merge_pool_properties(lists):
    pools = [[cand(s, sc, kind=ProvenanceKind.STATIC_EMBEDDING if e else ProvenanceKind.FILL_MASK)
              for s, sc, e in lst] for lst in lists]
    out = merge_pool(pools, "e")
    keys = [c.key for c in out]
    assert len(keys) == len(set(keys))
    assert "e" not in keys
    every = {c.key for lst in pools for c in lst} - {"e"}
    assert set(keys) == every
    assert merge_pool(list(reversed(pools)), "e") == out
