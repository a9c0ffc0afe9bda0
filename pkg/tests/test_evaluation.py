import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from mcqgen.core import ContentLabel, MCQItem, QType
from mcqgen.errors import (EmptyInputError, MalformedLineError, ProbSumViolation, SingletonError,
                           UnknownItemError)
from mcqgen.evaluation import (CorrelationAccumulator, EvalRecord, MetricsReport, breakdown, confidence,
                               confidence_soft_correlation, evaluate_runs, format_percent, format_scaled,
                               hard_accuracy, human_eval_summary, ingest_logs, mean_confidence,
                               metrics_report, render_tables, soft_accuracy)

from conftest import oracle_confidence, oracle_hard, oracle_pearson, oracle_soft


def rec(probs, correct=0, item="i", model="m"):
    return EvalRecord(item, model, tuple(probs), correct)


UNIFORM = [0.25] * 4


def write_log(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


# -- ingestion ---------------------------------------------------------------------

def test_ingest_examples(tmp_path):
    p = write_log(tmp_path / "log.jsonl", [
        {"item_id": "a", "model_id": "m", "loglikelihoods": [0, 0, 0, 0], "correct_index": 1},
        {"item_id": "b", "model_id": "m", "quantization": "4bit", "probs": [0.7, 0.1, 0.1, 0.1], "correct_index": 0},
    ])
    a, b = ingest_logs(p)
    assert a.probs == (0.25, 0.25, 0.25, 0.25)
    assert b.quantization == "4bit" and b.probs[0] == 0.7


def test_ingest_rejects_bad_sums_and_lines(tmp_path):
    p = write_log(tmp_path / "bad.jsonl", [{"item_id": "x", "model_id": "m", "probs": [0.7, 0.1, 0.1, 0.2],
                                            "correct_index": 0}])
    with pytest.raises(ProbSumViolation):
        list(ingest_logs(p))
    p = write_log(tmp_path / "bad2.jsonl", [{"item_id": "x", "model_id": "m", "correct_index": 0}])
    with pytest.raises(MalformedLineError):
        list(ingest_logs(p))
    (tmp_path / "bad3.jsonl").write_text("{not json\n")
    with pytest.raises(MalformedLineError):
        list(ingest_logs(tmp_path / "bad3.jsonl"))


def test_softmax_is_stable_for_large_loglikelihoods(tmp_path):
    p = write_log(tmp_path / "log.jsonl", [{"item_id": "a", "model_id": "m",
                                            "loglikelihoods": [-1000.0, -1001.0, -5000.0, -1000.0],
                                            "correct_index": 0}])
    (r,) = ingest_logs(p)
    assert r.probs[0] == pytest.approx(r.probs[3]) and r.probs[2] == 0.0


# -- metric examples -----------------------------------------------------------------

def test_hard_accuracy_examples():
    rows = [rec([0.7, 0.1, 0.1, 0.1]), rec([0.1, 0.7, 0.1, 0.1], 1), rec([0.4, 0.3, 0.2, 0.1]),
            rec([0.1, 0.7, 0.1, 0.1], 0)]
    assert hard_accuracy(rows) == 0.75
    assert hard_accuracy([rec(UNIFORM)] * 3) == 0.0
    assert hard_accuracy([rec([0.4, 0.4, 0.1, 0.1])]) == 0.0


def test_soft_accuracy_examples():
    assert soft_accuracy([rec([0.5, 0.5, 0, 0]), rec([0.3, 0.7, 0, 0])]) == pytest.approx(0.4)
    assert soft_accuracy([rec([1, 0, 0, 0])] * 2) == 1.0
    assert soft_accuracy([rec(UNIFORM)]) == 0.25


def test_confidence_examples():
    assert confidence(UNIFORM) == 0.0
    assert confidence([1, 0, 0, 0]) == 1.0
    assert confidence([0.5, 0.25, 0.125, 0.125]) == pytest.approx(0.125, abs=1e-12)


def test_mean_confidence_examples():
    assert mean_confidence([rec(UNIFORM), rec([1, 0, 0, 0])]) == 0.5
    assert mean_confidence([rec(UNIFORM)] * 4) == 0.0
    assert mean_confidence([rec([1, 0, 0, 0])]) == 1.0


def test_correlation_examples():
    # two-choice records make confidence and soft accuracy easy to steer
    ps = [0.55, 0.6, 0.7, 0.8, 0.95]
    same = [rec([p, 1 - p], 0) for p in ps]
    x = [confidence(r.probs) for r in same]
    assert confidence_soft_correlation(same) == pytest.approx(oracle_pearson(x, ps))
    # same confidences, soft accuracy mirrored to 1 - p
    opposite = [rec([p, 1 - p], 1) for p in ps]
    assert confidence_soft_correlation(opposite) == pytest.approx(-confidence_soft_correlation(same))
    assert confidence_soft_correlation([rec(UNIFORM), rec([0.25] * 4, 1)]) is None
    with pytest.raises(SingletonError):
        confidence_soft_correlation([rec(UNIFORM)])
    with pytest.raises(EmptyInputError):
        soft_accuracy([])


def test_correlation_perfect_linear_relation():
    # records cannot pin y == x exactly, so feed the pairs to the accumulator directly
    xs = [0.1, 0.3, 0.2, 0.9, 0.5]
    acc = CorrelationAccumulator()
    for v in xs:
        acc.add(v, v)
    assert acc.value() == pytest.approx(1.0)
    acc = CorrelationAccumulator()
    for v in xs:
        acc.add(v, 1 - v)
    assert acc.value() == pytest.approx(-1.0)


# -- oracle equivalence and symmetry properties -------------------------------------

@st.composite
def record_sets(draw, max_n=60):
    n = draw(st.integers(2, max_n))
    rows = []
    for i in range(n):
        w = draw(st.lists(st.integers(0, 8), min_size=4, max_size=4).filter(any))
        total = sum(w)
        probs = [x / total for x in w]
        rows.append(rec(probs, draw(st.integers(0, 3)), item=f"q{i}"))
    return rows


def as_rows(records):
    return [(list(r.probs), r.correct_index) for r in records]


@settings(max_examples=80)
@given(record_sets())
def test_metrics_match_oracles(records):
    rows = as_rows(records)
    assert hard_accuracy(records) == pytest.approx(oracle_hard(rows), abs=1e-9)
    assert soft_accuracy(records) == pytest.approx(oracle_soft(rows), abs=1e-9)
    conf = [oracle_confidence(p) for p, _ in rows]
    assert mean_confidence(records) == pytest.approx(sum(conf) / len(conf), abs=1e-9)
    expected = oracle_pearson(conf, [p[c] for p, c in rows])
    got = confidence_soft_correlation(records)
    if expected is None:
        assert got is None
    else:
        assert got == pytest.approx(expected, abs=1e-9)
        assert -1.0 <= got <= 1.0
    assert hard_accuracy(records) * len(records) == pytest.approx(round(hard_accuracy(records) * len(records)))


def test_metrics_match_oracles_at_scale():
    rng = random.Random(11)
    records = []
    for i in range(500):
        w = [rng.random() for _ in range(4)]
        records.append(rec([x / sum(w) for x in w], rng.randrange(4), item=f"q{i}"))
    rows = as_rows(records)
    conf = [oracle_confidence(p) for p, _ in rows]
    assert abs(hard_accuracy(records) - oracle_hard(rows)) < 1e-9
    assert abs(soft_accuracy(records) - oracle_soft(rows)) < 1e-9
    assert abs(mean_confidence(records) - sum(conf) / 500) < 1e-9
    assert abs(confidence_soft_correlation(records) - oracle_pearson(conf, [p[c] for p, c in rows])) < 1e-9


def summary(records):
    r = metrics_report(records)
    return r.hard_accuracy, r.soft_accuracy, r.mean_confidence, r.correlation


def close(a, b):
    return all((x is None and y is None) or (x is not None and y is not None and abs(x - y) < 1e-9)
               for x, y in zip(a, b))


@settings(max_examples=60)
@given(record_sets(), st.randoms(use_true_random=False))
def test_record_permutation_invariance(records, rnd):
    shuffled = list(records)
    rnd.shuffle(shuffled)
    assert close(summary(records), summary(shuffled))


@settings(max_examples=60)
@given(record_sets(), st.permutations(range(4)))
def test_label_permutation_equivariance(records, perm):
    moved = [rec([r.probs[perm[j]] for j in range(4)], perm.index(r.correct_index), r.item_id) for r in records]
    assert close(summary(records), summary(moved))


@settings(max_examples=60)
@given(record_sets(), st.integers(1, 59))
def test_correlation_accumulator_merges(records, cut):
    cut = min(cut, len(records) - 1)
    pts = [(confidence(r.probs), r.probs[r.correct_index]) for r in records]
    left, right = CorrelationAccumulator(), CorrelationAccumulator()
    for x, y in pts[:cut]:
        left.add(x, y)
    for x, y in pts[cut:]:
        right.add(x, y)
    merged = left.merge(right).value()
    expected = oracle_pearson([p[0] for p in pts], [p[1] for p in pts])
    if expected is None:
        assert merged is None
    else:
        assert merged == pytest.approx(expected, abs=1e-7)


# -- breakdowns ---------------------------------------------------------------------

def items_for(types):
    return {f"q{i}": MCQItem(f"q{i}", "q?", ("a", "b", "c", "d"), 0, qtype=t, content=c)
            for i, (t, c) in enumerate(types)}


def test_breakdown_partition_counts():
    items = items_for([(QType.WHEN, ContentLabel.HISTORY), (QType.WHEN, ContentLabel.SPORT),
                       (QType.WHO, ContentLabel.HISTORY)])
    records = [rec([0.7, 0.1, 0.1, 0.1], 0, f"q{i}") for i in range(3)]
    rep = breakdown(records, items)
    assert {k: v.n for k, v in rep.breakdowns["qtype"].items()} == {"WHEN": 2, "WHO": 1}


def test_single_category_matches_overall():
    items = items_for([(QType.WHAT, ContentLabel.SCIENCE)] * 3)
    records = [rec([0.7, 0.1, 0.1, 0.1], 0, "q0"), rec([0.2, 0.5, 0.2, 0.1], 0, "q1"),
               rec([0.3, 0.3, 0.3, 0.1], 2, "q2")]
    rep = breakdown(records, items)
    sub = rep.breakdowns["qtype"]["WHAT"]
    assert summary_of(sub) == summary_of(rep)


def summary_of(r: MetricsReport):
    return r.n, r.hard_accuracy, r.soft_accuracy, r.mean_confidence, r.correlation


def test_breakdown_unknown_item():
    with pytest.raises(UnknownItemError):
        breakdown([rec(UNIFORM, 0, "nope")], {})


@settings(max_examples=50)
@given(record_sets(), st.lists(st.tuples(st.sampled_from(list(QType)), st.sampled_from(list(ContentLabel))),
                               min_size=60, max_size=60))
def test_breakdown_weighted_soft_equals_overall(records, labels):
    items = items_for(labels[:len(records)])
    rep = breakdown(records, items)
    for axis in ("qtype", "content"):
        subs = rep.breakdowns[axis].values()
        assert sum(s.n for s in subs) == rep.n
        weighted = sum(s.n * s.soft_accuracy for s in subs) / rep.n
        assert abs(weighted - rep.soft_accuracy) < 1e-9


def test_evaluate_runs_splits_models():
    items = items_for([(QType.WHAT, ContentLabel.SCIENCE)] * 2)
    records = [EvalRecord("q0", "a", tuple(UNIFORM), 0, "16bit"), EvalRecord("q1", "b", (1.0, 0, 0, 0), 0),
               EvalRecord("q1", "a", (1.0, 0, 0, 0), 0, "16bit")]
    runs = evaluate_runs(records, items)
    assert [(r.model_id, r.quantization, r.n) for r in runs] == [("a", "16bit", 2), ("b", "", 1)]


# -- human evaluation -----------------------------------------------------------------

def annotations(n, positives, field):
    other = "distractive" if field == "valid" else "valid"
    return [{"item_id": str(i), "annotator": "x", field: i < positives, other: True} for i in range(n)]


def test_human_eval_reported_rates():
    valid, _ = human_eval_summary(annotations(200, 195, "valid"))
    _, distractive = human_eval_summary(annotations(200, 189, "distractive"))
    assert format_percent(valid) == "97.5"
    assert format_percent(distractive) == "94.5"
    assert human_eval_summary([{"item_id": "1", "valid": False, "distractive": False}]) == (0.0, 0.0)


def test_human_eval_majority_and_ties():
    rows = [{"item_id": "a", "valid": True, "distractive": True},
            {"item_id": "a", "valid": False, "distractive": True},
            {"item_id": "b", "valid": True, "distractive": False},
            {"item_id": "b", "valid": True, "distractive": False},
            {"item_id": "b", "valid": False, "distractive": True}]
    # a: valid tie -> negative; b: valid 2/3 -> positive, distractive 1/3 -> negative
    assert human_eval_summary(rows) == (50.0, 50.0)
    with pytest.raises(EmptyInputError):
        human_eval_summary([])


# -- rendering ------------------------------------------------------------------------

def test_format_scaled_examples():
    assert format_scaled(0.492) == "49.2"
    assert format_scaled(0.4925) == "49.3"
    assert format_scaled(1.0) == "100.0"
    assert format_scaled(0.0) == "0.0"
    assert format_scaled(None) == "—"
    assert format_scaled(-0.0005) == "-0.1"


def test_render_tables_shapes():
    items = items_for([(QType.WHEN, ContentLabel.HISTORY), (QType.WHO, ContentLabel.HISTORY)])
    rep = breakdown([rec(UNIFORM, 0, "q0"), rec([0.25] * 4, 1, "q1")], items, "qwen", "16bit")
    text = render_tables([rep])
    assert "Hard Acc." in text and "—" in text and "25.0" in text
    tsv = render_tables([rep], "tsv").splitlines()
    assert tsv[1].split("\t") == ["Model", "Quantization", "Hard Acc.", "Soft Acc.", "Confidence", "Correlation"]
    assert tsv[2].split("\t") == ["qwen", "16bit", "0.0", "25.0", "0.0", "—"]
    assert "WHEN\tWHO" in "\n".join(tsv)
    with pytest.raises(ValueError):
        render_tables([rep], "xml")


def test_report_json_round_trip():
    items = items_for([(QType.WHEN, ContentLabel.HISTORY), (QType.WHO, ContentLabel.SPORT)])
    rep = breakdown([rec([0.7, 0.1, 0.1, 0.1], 0, "q0"), rec([0.2, 0.5, 0.2, 0.1], 0, "q1")], items, "m")
    again = MetricsReport.from_json(json.loads(json.dumps(rep.to_json())))
    assert again == rep
