import math
from pathlib import Path

import pytest

from mcqgen.core import Candidate, Provenance, ProvenanceKind

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def cand(surface, score=0.5, kind=ProvenanceKind.FILL_MASK, source="stub", **kw) -> Candidate:
    return Candidate(surface, Provenance(kind, source), score, **kw)


class StubFillMask:
    """Fill-mask backend returning a fixed prediction list."""

    concurrent_safe = True

    def __init__(self, preds, id="stub", mask_token="<mask>"):
        self.preds = list(preds)
        self.id = id
        self.mask_token = mask_token
        self.calls = []

    def predict(self, masked, k):
        self.calls.append((masked, k))
        return self.preds[:k]


class VectorEncoder:
    """Context encoder that maps the substituted span text to a fixed vector."""

    concurrent_safe = True

    def __init__(self, table, dim, id="stub-encoder"):
        self.table = table
        self.dim = dim
        self.id = id

    def embed(self, sentence, span):
        return self.table[sentence[span[0]:span[1]]]


# -- independent metric oracles: plain Python, no numpy, no package code --------

def oracle_hard(rows):
    hits = 0
    for probs, correct in rows:
        best = max(probs)
        winners = [i for i, p in enumerate(probs) if p == best]
        hits += winners == [correct]
    return hits / len(rows)


def oracle_soft(rows):
    return math.fsum(probs[correct] for probs, correct in rows) / len(rows)


def oracle_confidence(probs):
    # entropy in bits against log2(c) bits; same ratio as any other base
    bits = 0.0
    for p in probs:
        if p > 0:
            bits -= p * math.log2(p)
    return min(1.0, max(0.0, 1.0 - bits / math.log2(len(probs))))


def oracle_pearson(xs, ys):
    n = len(xs)
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if max(xs) == min(xs) or max(ys) == min(ys):
        return None
    return sxy / math.sqrt(sxx * syy)
