"""Knowledge-graph embeddings with ComplEx, at desk scale.

Entities and relations are complex vectors stored as separate real and
imaginary matrices. A triple (h, r, t) scores

    Re( sum_k w_r[k] * e_h[k] * conj(e_t[k]) )

and training minimizes the logistic loss on observed triples against
uniformly corrupted ones, with L2 on the rows each batch touches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import normalize_text
from .errors import AmbiguousLabelError, EmptyStoreError, IndexOutOfRange

log = logging.getLogger(__name__)


class TripleStore:
    """Entity/relation vocabularies plus deduplicated index triples."""

    def __init__(self):
        self.entities: dict[str, int] = {}
        self.relations: dict[str, int] = {}
        self.triples: list[tuple[int, int, int]] = []
        self._raw: dict[str, str] = {}
        self._seen: set = set()

    def __len__(self) -> int:
        return len(self.triples)

    def _intern(self, table: dict, raw: str) -> int:
        key = normalize_text(raw)
        if not key:
            raise ValueError("empty label")
        prev = self._raw.setdefault(f"{id(table)}:{key}", raw)
        if prev != raw:
            raise AmbiguousLabelError(f"labels {prev!r} and {raw!r} normalize identically")
        return table.setdefault(key, len(table))

    def add(self, head: str, relation: str, tail: str) -> bool:
        """Add one triple; returns False if it was already present."""
        t = (self._intern(self.entities, head), self._intern(self.relations, relation),
             self._intern(self.entities, tail))
        if t in self._seen:
            return False
        self._seen.add(t)
        self.triples.append(t)
        return True

    @classmethod
    def from_triples(cls, rows: Iterable[tuple[str, str, str]]) -> "TripleStore":
        store = cls()
        for h, r, t in rows:
            store.add(h, r, t)
        return store

    @classmethod
    def load(cls, path) -> "TripleStore":
        """Read ``head<TAB>relation<TAB>tail`` lines."""
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{line_no}: expected head<TAB>relation<TAB>tail")
                store.add(*parts)
        return store

    @property
    def entity_labels(self) -> list[str]:
        return sorted(self.entities, key=self.entities.get)

    @property
    def relation_labels(self) -> list[str]:
        return sorted(self.relations, key=self.relations.get)

    def array(self) -> np.ndarray:
        return np.array(self.triples, dtype=np.int64).reshape(-1, 3)


@dataclass
class ComplexEmbedding:
    entity_re: np.ndarray
    entity_im: np.ndarray
    rel_re: np.ndarray
    rel_im: np.ndarray
    entity_labels: list = field(default_factory=list)
    relation_labels: list = field(default_factory=list)

    def __post_init__(self):
        if self.entity_re.shape != self.entity_im.shape or self.rel_re.shape != self.rel_im.shape:
            raise ValueError("real and imaginary parts must have equal shapes")
        if self.entity_re.shape[1] != self.rel_re.shape[1]:
            raise ValueError("entity and relation dims differ")
        self.entities = {normalize_text(l): i for i, l in enumerate(self.entity_labels)}
        self.relations = {normalize_text(l): i for i, l in enumerate(self.relation_labels)}

    @property
    def dim(self) -> int:
        return self.entity_re.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_re.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_re.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.entity_re, self.entity_im, self.rel_re, self.rel_im]

    def copy(self) -> "ComplexEmbedding":
        return ComplexEmbedding(*(p.copy() for p in self.params()),
                                list(self.entity_labels), list(self.relation_labels))

    def entity_vector(self, idx: int) -> np.ndarray:
        return np.concatenate([self.entity_re[idx], self.entity_im[idx]])

    def save(self, path) -> None:
        """Header ``E R dim``, then one row per entity and per relation.

        Each row is ``label<TAB>`` followed by the real then imaginary parts
        as space-separated decimals with 17 significant digits.
        """
        def fmt(label, re_, im_):
            vals = " ".join(f"{x:.17g}" for x in np.concatenate([re_, im_]))
            return f"{label}\t{vals}\n"

        e_labels = self.entity_labels or [str(i) for i in range(self.n_entities)]
        r_labels = self.relation_labels or [str(i) for i in range(self.n_relations)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n_entities} {self.n_relations} {self.dim}\n")
            for i, label in enumerate(e_labels):
                fh.write(fmt(label, self.entity_re[i], self.entity_im[i]))
            for i, label in enumerate(r_labels):
                fh.write(fmt(label, self.rel_re[i], self.rel_im[i]))

    @classmethod
    def load(cls, path) -> "ComplexEmbedding":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise ValueError(f"{path}: header must be 'E R dim'")
            n_e, n_r, dim = (int(x) for x in header)
            labels, rows = [], []
            for line_no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                label, _, values = line.rstrip("\n").rpartition("\t")
                vec = [float(v) for v in values.split()]
                if len(vec) != 2 * dim:
                    raise ValueError(f"{path}:{line_no}: expected {2 * dim} values")
                labels.append(label or str(len(labels) if len(labels) < n_e else len(labels) - n_e))
                rows.append(vec)
        if len(rows) != n_e + n_r:
            raise ValueError(f"{path}: expected {n_e + n_r} rows, found {len(rows)}")
        m = np.array(rows, dtype=float).reshape(n_e + n_r, 2 * dim)
        return cls(m[:n_e, :dim].copy(), m[:n_e, dim:].copy(), m[n_e:, :dim].copy(), m[n_e:, dim:].copy(),
                   labels[:n_e], labels[n_e:])


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 50
    learning_rate: float = 0.05
    epochs: int = 100
    negatives_per_positive: int = 5
    l2_lambda: float = 1e-3
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.learning_rate <= 0 or self.epochs < 0 \
                or self.negatives_per_positive < 1 or self.l2_lambda < 0 or self.batch_size < 1:
            raise ValueError(f"invalid training config {self}")


def complex_score(emb: ComplexEmbedding, h: int, r: int, t: int) -> float:
    for idx, n in ((h, emb.n_entities), (r, emb.n_relations), (t, emb.n_entities)):
        if not 0 <= idx < n:
            raise IndexOutOfRange(f"index {idx} outside [0, {n})")
    return float(score_batch(emb, np.array([[h, r, t]]))[0])


def score_batch(emb: ComplexEmbedding, triples: np.ndarray) -> np.ndarray:
    hr, hi = emb.entity_re[triples[:, 0]], emb.entity_im[triples[:, 0]]
    rr, ri = emb.rel_re[triples[:, 1]], emb.rel_im[triples[:, 1]]
    tr, ti = emb.entity_re[triples[:, 2]], emb.entity_im[triples[:, 2]]
    return np.sum(rr * (hr * tr + hi * ti) + ri * (hr * ti - hi * tr), axis=1)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def loss_and_grad(emb: ComplexEmbedding, triples: np.ndarray, labels: np.ndarray,
                  l2_lambda: float, n_positive: Optional[int] = None):
    """Batch objective and its gradient w.r.t. every parameter matrix.

    loss = sum_i softplus(-y_i * s_i) / n_positive
           + l2_lambda * (squared norm of every entity/relation row in the batch)

    ``labels`` are +1 / -1. Gradients are dense arrays shaped like the
    parameters (zero outside touched rows).
    """
    n_positive = n_positive or int(np.sum(labels > 0)) or len(labels)
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    hr, hi = emb.entity_re[h], emb.entity_im[h]
    rr, ri = emb.rel_re[r], emb.rel_im[r]
    tr, ti = emb.entity_re[t], emb.entity_im[t]
    s = np.sum(rr * (hr * tr + hi * ti) + ri * (hr * ti - hi * tr), axis=1)
    loss = float(np.sum(_softplus(-labels * s))) / n_positive
    ds = (-labels * _sigmoid(-labels * s) / n_positive)[:, None]

    g_ere = np.zeros_like(emb.entity_re)
    g_eim = np.zeros_like(emb.entity_im)
    g_rre = np.zeros_like(emb.rel_re)
    g_rim = np.zeros_like(emb.rel_im)
    np.add.at(g_ere, h, ds * (rr * tr + ri * ti))
    np.add.at(g_eim, h, ds * (rr * ti - ri * tr))
    np.add.at(g_ere, t, ds * (rr * hr - ri * hi))
    np.add.at(g_eim, t, ds * (rr * hi + ri * hr))
    np.add.at(g_rre, r, ds * (hr * tr + hi * ti))
    np.add.at(g_rim, r, ds * (hr * ti - hi * tr))

    if l2_lambda:
        ents = np.unique(np.concatenate([h, t]))
        rels = np.unique(r)
        loss += l2_lambda * float(np.sum(emb.entity_re[ents] ** 2) + np.sum(emb.entity_im[ents] ** 2)
                                  + np.sum(emb.rel_re[rels] ** 2) + np.sum(emb.rel_im[rels] ** 2))
        g_ere[ents] += 2 * l2_lambda * emb.entity_re[ents]
        g_eim[ents] += 2 * l2_lambda * emb.entity_im[ents]
        g_rre[rels] += 2 * l2_lambda * emb.rel_re[rels]
        g_rim[rels] += 2 * l2_lambda * emb.rel_im[rels]
    return loss, [g_ere, g_eim, g_rre, g_rim]


def init_embedding(n_entities: int, n_relations: int, dim: int, rng: np.random.Generator,
                   entity_labels=(), relation_labels=()) -> ComplexEmbedding:
    u = lambda n: rng.uniform(-0.1, 0.1, size=(n, dim))  # noqa: E731
    return ComplexEmbedding(u(n_entities), u(n_entities), u(n_relations), u(n_relations),
                            list(entity_labels), list(relation_labels))


def corrupt(positives: np.ndarray, n_neg: int, n_entities: int, rng: np.random.Generator) -> np.ndarray:
    """``n_neg`` copies of each positive with the head or the tail (coin flip) resampled."""
    neg = np.repeat(positives, n_neg, axis=0)
    replace_head = rng.random(len(neg)) < 0.5
    new = rng.integers(0, n_entities, size=len(neg))
    neg[replace_head, 0] = new[replace_head]
    neg[~replace_head, 2] = new[~replace_head]
    return neg


@dataclass
class TrainResult:
    embedding: ComplexEmbedding
    epoch_loss: list


def train(store: TripleStore, cfg: TrainConfig) -> TrainResult:
    """Plain SGD on the logistic ComplEx objective; deterministic for a fixed seed."""
    if len(store) == 0:
        raise EmptyStoreError("no triples to train on")
    rng = np.random.default_rng(cfg.seed)
    emb = init_embedding(len(store.entities), len(store.relations), cfg.dim, rng,
                         store.entity_labels, store.relation_labels)
    triples = store.array()
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            pos = triples[order[start:start + cfg.batch_size]]
            neg = corrupt(pos, cfg.negatives_per_positive, emb.n_entities, rng)
            batch = np.concatenate([pos, neg])
            labels = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
            loss, grads = loss_and_grad(emb, batch, labels, cfg.l2_lambda, len(pos))
            for p, g in zip(emb.params(), grads):
                p -= cfg.learning_rate * g
            total += loss
            batches += 1
        history.append(total / batches)
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d loss %.6f", epoch, history[-1])
    return TrainResult(emb, history)


def filtered_mrr(emb: ComplexEmbedding, store: TripleStore, triples: Optional[np.ndarray] = None) -> float:
    """Filtered mean reciprocal rank over head and tail prediction.

    Other known true triples are removed from each candidate list; ties
    with the target count half.
    """
    triples = store.array() if triples is None else triples
    known = set(store.triples)
    ent = np.arange(emb.n_entities)
    recips = []
    for h, r, t in triples:
        for side in ("tail", "head"):
            cands = np.tile([h, r, t], (emb.n_entities, 1))
            cands[:, 2 if side == "tail" else 0] = ent
            scores = score_batch(emb, cands)
            target = t if side == "tail" else h
            mask = np.array([tuple(c) not in known or c[2 if side == "tail" else 0] == target
                             for c in cands])
            others = np.delete(scores[mask], np.flatnonzero(ent[mask] == target))
            true = scores[target]
            rank = 1 + np.sum(others > true) + 0.5 * np.sum(others == true)
            recips.append(1.0 / rank)
    return float(np.mean(recips))


def link_entity(vocab, surface: str) -> Optional[str]:
    """Exact normalized-label lookup; returns the normalized label or None."""
    key = normalize_text(surface)
    return key if key in vocab.entities else None


def entity_similarity(emb: ComplexEmbedding, a: str, b: str) -> Optional[float]:
    """Cosine of the concatenated [real | imaginary] entity vectors; None if unlinked."""
    ka, kb = link_entity(emb, a), link_entity(emb, b)
    if ka is None or kb is None:
        return None
    va = emb.entity_vector(emb.entities[ka])
    vb = emb.entity_vector(emb.entities[kb])
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def build_toy_graph() -> list[tuple[str, str, str]]:
    """The 20-entity, 3-relation, 60-triple graph used by tests and demos.

    Five countries, each with a capital and two further cities. Cities in
    the same country are twinned with each other, and neighbouring capitals
    are twinned across countries.
    """
    countries = ["Iran", "France", "Japan", "Egypt", "Brazil"]
    capitals = ["Tehran", "Paris", "Tokyo", "Cairo", "Brasilia"]
    cities = [["Shiraz", "Isfahan"], ["Lyon", "Nice"], ["Osaka", "Kyoto"],
              ["Alexandria", "Luxor"], ["Recife", "Santos"]]
    rows = []
    for country, cap in zip(countries, capitals):
        rows.append((cap, "capital_of", country))
    for country, cap, more in zip(countries, capitals, cities):
        for city in [cap, *more]:
            rows.append((city, "located_in", country))
    for cap, more in zip(capitals, cities):
        members = [cap, *more]
        rows.extend((a, "twinned_with", b) for a in members for b in members if a != b)
    for i, cap in enumerate(capitals):
        nxt = capitals[(i + 1) % len(capitals)]
        rows.append((cap, "twinned_with", nxt))
        rows.append((nxt, "twinned_with", cap))
    return rows
