"""Dataset builder: split a raw triple dump into background relations and
one-shot task relations, and emit meta-train/validation/test task files.

Layout of an emitted dataset directory:
  entities.txt / relations.txt   vocabulary, one name per line (id = line no.)
  background.txt                 background triples, tab-separated names
  manifest.json                  relation-name lists per bucket + build seed
  tasks/<relation>.json          one file per task relation
"""

from __future__ import annotations

import json
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .graph_store import Triple, Vocab, build_candidates, save_triples


@dataclass
class TaskSet:
    """One task relation: a single reference triple plus test queries."""
    relation: int
    reference: Triple
    queries: list = field(default_factory=list)   # (head, truth, candidates)

    def all_triples(self):
        triples = [self.reference]
        triples.extend(Triple(h, self.relation, t) for h, t, _ in self.queries)
        return triples


@dataclass
class SplitManifest:
    meta_train: list
    meta_valid: list
    meta_test: list
    background: list
    seed: int

    def task_relations(self):
        return self.meta_train + self.meta_valid + self.meta_test

    def validate(self):
        buckets = [set(self.meta_train), set(self.meta_valid), set(self.meta_test)]
        for i in range(3):
            for j in range(i + 1, 3):
                if buckets[i] & buckets[j]:
                    raise DataError("task split buckets overlap: %s" % (buckets[i] & buckets[j]))
        task = buckets[0] | buckets[1] | buckets[2]
        if task & set(self.background):
            raise DataError("background relations overlap task relations")
        return self


def relation_counts(triples):
    return Counter(t.relation for t in triples)


def select_task_relations(triples, lo=50, hi=500):
    """Relations with strictly more than ``lo`` and strictly fewer than ``hi`` triples."""
    if lo >= hi:
        raise ConfigError("frequency band requires lo < hi")
    counts = relation_counts(triples)
    tasks = sorted(r for r, c in counts.items() if lo < c < hi)
    if not tasks:
        raise DataError("no relation has a triple count inside (%d, %d); adjust the band" % (lo, hi))
    return tasks


def detect_inverse_relations(triples, vocab, threshold=0.95):
    """Relation ids to drop because another relation mirrors their pairs.

    A pair (r1, r2) is flagged when at least ``threshold`` of r1's (h, t)
    pairs appear reversed under r2; the lexicographically larger name of a
    flagged pair is dropped.
    """
    pairs = defaultdict(set)
    for h, r, t in triples:
        pairs[r].add((h, t))
    reversed_pairs = {r: {(t, h) for h, t in p} for r, p in pairs.items()}
    drop = set()
    rels = sorted(pairs)
    for r1 in rels:
        for r2 in rels:
            if r1 == r2:
                continue
            overlap = len(pairs[r1] & reversed_pairs[r2])
            if overlap / len(pairs[r1]) >= threshold:
                drop.add(max(r1, r2, key=lambda r: vocab.id2rel[r]))
    return drop


def partition_tasks(task_relations, counts, seed=0):
    """Deterministic seeded shuffle, then a split by explicit counts."""
    n_train, n_valid, n_test = counts
    if n_train + n_valid + n_test != len(task_relations):
        raise ConfigError("split counts %s do not sum to %d task relations"
                          % (counts, len(task_relations)))
    order = list(task_relations)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    return order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:]


def _task_filename(name):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) + ".json"


def emit_dataset(out_dir, triples, vocab, manifest, candidate_floor=20):
    """Write background file, per-task files with candidate sets, and the manifest.

    The one-shot reference of each task is fixed here, uniformly at random
    under the manifest seed, so every model compares on identical evidence.
    """
    manifest.validate()
    os.makedirs(os.path.join(out_dir, "tasks"), exist_ok=True)

    with open(os.path.join(out_dir, "entities.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(name + "\n" for name in vocab.id2ent))
    with open(os.path.join(out_dir, "relations.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(name + "\n" for name in vocab.id2rel))

    task_set = set(manifest.task_relations())
    background = [t for t in triples if t.relation not in task_set]
    by_relation = defaultdict(list)
    for t in triples:
        if t.relation in task_set:
            by_relation[t.relation].append(t)

    save_triples(os.path.join(out_dir, "background.txt"), background, vocab)

    rng = np.random.default_rng(manifest.seed)
    for rel in sorted(task_set):
        rel_triples = by_relation[rel]
        if len(rel_triples) < 2:
            raise DataError("task relation %s has fewer than 2 triples" % vocab.id2rel[rel])
        observed_tails = {t.tail for t in rel_triples}
        ref = rel_triples[int(rng.integers(len(rel_triples)))]
        cand_rng = np.random.default_rng(manifest.seed + rel)
        queries = []
        for trip in rel_triples:
            if trip == ref:
                continue
            cands = build_candidates(trip.tail, observed_tails, vocab,
                                     floor=candidate_floor, rng=cand_rng)
            queries.append({
                "head": vocab.id2ent[trip.head],
                "truth": vocab.id2ent[trip.tail],
                "candidates": [vocab.id2ent[c] for c in cands],
            })
        payload = {
            "relation": vocab.id2rel[rel],
            "reference": [vocab.id2ent[ref.head], vocab.id2rel[rel], vocab.id2ent[ref.tail]],
            "queries": queries,
        }
        path = os.path.join(out_dir, "tasks", _task_filename(vocab.id2rel[rel]))
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)

    manifest_payload = {
        "meta_train": [vocab.id2rel[r] for r in manifest.meta_train],
        "meta_valid": [vocab.id2rel[r] for r in manifest.meta_valid],
        "meta_test": [vocab.id2rel[r] for r in manifest.meta_test],
        "background": [vocab.id2rel[r] for r in sorted(manifest.background)],
        "seed": manifest.seed,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest_payload, fh, indent=1, sort_keys=True)


def build_dataset(out_dir, triples, vocab, counts=None, band=(50, 500), seed=0,
                  candidate_floor=20, inverse_threshold=0.95, explicit_split=None):
    """Full pipeline: inverse removal, band selection, split, emit.

    ``explicit_split`` optionally gives three lists of relation names instead
    of a seeded random partition. Returns the manifest (integer relation ids).
    """
    drop = detect_inverse_relations(triples, vocab, threshold=inverse_threshold)
    kept = [t for t in triples if t.relation not in drop]
    tasks = select_task_relations(kept, lo=band[0], hi=band[1])
    if explicit_split is not None:
        name_lists = explicit_split
        buckets = []
        for names in name_lists:
            ids = []
            for name in names:
                if name not in vocab.rel2id:
                    raise DataError("unknown relation %r in explicit split" % name)
                ids.append(vocab.rel2id[name])
            buckets.append(ids)
        train, valid, test = buckets
        if set(train + valid + test) != set(tasks):
            raise DataError("explicit split does not cover the selected task relations")
    else:
        if counts is None:
            n = len(tasks)
            n_test = max(1, round(n * 11 / 67))
            n_valid = max(1, round(n * 5 / 67))
            counts = (n - n_valid - n_test, n_valid, n_test)
        train, valid, test = partition_tasks(tasks, counts, seed=seed)
    task_set = set(train) | set(valid) | set(test)
    background = sorted(set(t.relation for t in kept) - task_set)
    manifest = SplitManifest(train, valid, test, background, seed)
    emit_dataset(out_dir, kept, vocab, manifest, candidate_floor=candidate_floor)
    return manifest


# ---------------------------------------------------------------------------
# loading an emitted dataset


class Dataset:
    """In-memory view of an emitted dataset directory."""

    def __init__(self, vocab, background, tasks, manifest):
        self.vocab = vocab
        self.background = background        # list[Triple]
        self.tasks = tasks                  # relation-id -> TaskSet
        self.manifest = manifest

    def tasks_for(self, bucket):
        rel_ids = {"train": self.manifest.meta_train,
                   "valid": self.manifest.meta_valid,
                   "test": self.manifest.meta_test}[bucket]
        return [self.tasks[r] for r in rel_ids]


def load_dataset(dataset_dir, type_sidecar=None):
    vocab = Vocab()
    with open(os.path.join(dataset_dir, "entities.txt"), encoding="utf-8") as fh:
        for line in fh:
            vocab.add_entity(line.rstrip("\n"))
    with open(os.path.join(dataset_dir, "relations.txt"), encoding="utf-8") as fh:
        for line in fh:
            vocab.add_relation(line.rstrip("\n"))
    if type_sidecar:
        vocab.apply_type_sidecar(type_sidecar)

    background = []
    with open(os.path.join(dataset_dir, "background.txt"), encoding="utf-8") as fh:
        for line in fh:
            h, r, t = line.rstrip("\n").split("\t")
            background.append(Triple(vocab.ent2id[h], vocab.rel2id[r], vocab.ent2id[t]))

    with open(os.path.join(dataset_dir, "manifest.json"), encoding="utf-8") as fh:
        m = json.load(fh)
    manifest = SplitManifest(
        [vocab.rel2id[n] for n in m["meta_train"]],
        [vocab.rel2id[n] for n in m["meta_valid"]],
        [vocab.rel2id[n] for n in m["meta_test"]],
        [vocab.rel2id[n] for n in m["background"]],
        m["seed"],
    ).validate()

    tasks = {}
    for rel in manifest.task_relations():
        path = os.path.join(dataset_dir, "tasks", _task_filename(vocab.id2rel[rel]))
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        ref = Triple(vocab.ent2id[payload["reference"][0]], rel,
                     vocab.ent2id[payload["reference"][2]])
        queries = [(vocab.ent2id[q["head"]], vocab.ent2id[q["truth"]],
                    [vocab.ent2id[c] for c in q["candidates"]])
                   for q in payload["queries"]]
        tasks[rel] = TaskSet(rel, ref, queries)
    return Dataset(vocab, background, tasks, manifest)
