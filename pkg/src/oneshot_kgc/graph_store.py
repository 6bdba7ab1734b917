"""Triple ingestion, vocabularies, the background graph and candidate sets.

Triples are integer-coded against dense vocabularies assigned in
first-appearance order. The background graph stores, per entity, its outgoing
one-hop (relation, entity) tuples capped at a configurable maximum; candidate
sets for a query are built from the entity type constraint.
"""

from __future__ import annotations

from collections import Counter
from typing import NamedTuple

import numpy as np

from .errors import DataError, ParseError


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocab:
    """Bijective name<->id maps for entities and relations, plus type tags.

    The default type tag is the second ':'-separated segment of the entity
    name (names like "concept:sport:tennis" tag as "sport"); names without a
    ':' use the full name. A sidecar entity->type table overrides this.
    """

    def __init__(self):
        self.ent2id = {}
        self.id2ent = []
        self.rel2id = {}
        self.id2rel = []
        self._types = []
        self._type_override = {}

    @property
    def n_entities(self):
        return len(self.id2ent)

    @property
    def n_relations(self):
        return len(self.id2rel)

    def add_entity(self, name):
        eid = self.ent2id.get(name)
        if eid is None:
            eid = len(self.id2ent)
            self.ent2id[name] = eid
            self.id2ent.append(name)
            self._types.append(_default_type(name))
        return eid

    def add_relation(self, name):
        rid = self.rel2id.get(name)
        if rid is None:
            rid = len(self.id2rel)
            self.rel2id[name] = rid
            self.id2rel.append(name)
        return rid

    def entity_type(self, eid):
        name = self.id2ent[eid]
        return self._type_override.get(name, self._types[eid])

    def apply_type_sidecar(self, path):
        """Load a two-column (entity, type) TSV overriding default type tags."""
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ParseError("%s: line %d: expected 2 tab-separated fields, got %d"
                                     % (path, lineno, len(parts)))
                self._type_override[parts[0]] = parts[1]


def _default_type(name):
    parts = name.split(":")
    return parts[1] if len(parts) >= 2 else name


def load_triples(path, vocab=None):
    """Parse a tab-separated head/relation/tail file into coded triples.

    Returns (triples, vocab); ids are assigned in first-appearance order when
    a fresh vocab is built, otherwise the given vocab is extended in place.
    """
    if vocab is None:
        vocab = Vocab()
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("%s: line %d: expected 3 tab-separated fields, got %d"
                                 % (path, lineno, len(parts)))
            h, r, t = parts
            triples.append(Triple(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)))
    if not triples:
        raise ParseError("%s: no triples found" % path)
    return triples, vocab


def save_triples(path, triples, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write("%s\t%s\t%s\n" % (vocab.id2ent[h], vocab.id2rel[r], vocab.id2ent[t]))


class BackgroundGraph:
    """Per-entity outgoing neighbor lists over background relations only."""

    def __init__(self, neighbors, max_neighbors):
        self.neighbors = neighbors          # list of list[(relation, entity)]
        self.max_neighbors = max_neighbors
        self._padded = None

    @property
    def n_entities(self):
        return len(self.neighbors)

    def degree(self, eid):
        return len(self.neighbors[eid])

    def degree_histogram(self):
        return Counter(len(n) for n in self.neighbors)

    def padded_arrays(self):
        """(relations, entities, counts) int arrays padded with -1 to the cap."""
        if self._padded is None:
            n, cap = self.n_entities, self.max_neighbors
            rel = np.full((n, cap), -1, dtype=np.intp)
            ent = np.full((n, cap), -1, dtype=np.intp)
            counts = np.zeros(n, dtype=np.intp)
            for eid, lst in enumerate(self.neighbors):
                counts[eid] = len(lst)
                for j, (r, e) in enumerate(lst):
                    rel[eid, j] = r
                    ent[eid, j] = e
            self._padded = (rel, ent, counts)
        return self._padded


def build_neighbor_index(triples, n_entities, max_neighbors=50, seed=0):
    """Build the background graph, capping each neighbor list at the maximum.

    Over-cap lists are downsampled once, uniformly without replacement, under
    the given seed; the result is deterministic in (triples, cap, seed).
    """
    if max_neighbors <= 0:
        raise DataError("max_neighbors must be positive")
    full = [[] for _ in range(n_entities)]
    for h, r, t in triples:
        full[h].append((r, t))
    rng = np.random.default_rng(seed)
    neighbors = []
    for lst in full:
        if len(lst) > max_neighbors:
            picked = rng.choice(len(lst), size=max_neighbors, replace=False)
            lst = [lst[i] for i in sorted(picked)]
        neighbors.append(lst)
    return BackgroundGraph(neighbors, max_neighbors)


def build_candidates(truth, observed_tails, vocab, floor=20, rng=None):
    """Type-constrained candidate set for a query, always containing the truth.

    Candidates are all entities whose type tag matches the type of any
    observed tail of the relation, union the truth, in ascending entity id.
    When type matching yields fewer than ``floor`` candidates, seeded uniform
    distractors pad the set up to the floor.
    """
    tail_types = {vocab.entity_type(t) for t in observed_tails}
    cands = {eid for eid in range(vocab.n_entities) if vocab.entity_type(eid) in tail_types}
    cands.add(truth)
    if len(cands) < floor:
        if rng is None:
            rng = np.random.default_rng(0)
        pool = np.array([e for e in range(vocab.n_entities) if e not in cands], dtype=np.intp)
        need = min(floor - len(cands), pool.size)
        if need > 0:
            cands.update(int(e) for e in rng.choice(pool, size=need, replace=False))
    if len(cands) < 2:
        raise DataError("candidate set for truth %d has fewer than 2 entries" % truth)
    return sorted(cands)
