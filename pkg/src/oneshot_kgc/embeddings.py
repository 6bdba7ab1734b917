"""Baseline KG-embedding models trained on triples with negative sampling.

Four models: TransE, DistMult, ComplEx and RESCAL. TransE and RESCAL train
with a margin ranking loss; DistMult and ComplEx with a softplus logistic
loss plus L2 regularization. Each trained table can be exported to a unified
1-D-vector-per-symbol form consumed by the matching model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .errors import ConfigError, DataError

MODELS = ("TransE", "DistMult", "ComplEx", "RESCAL")


@dataclass
class EmbeddingTable:
    model: str
    dim: int
    ent: np.ndarray              # (E, d); ComplEx: (E, 2, d/2) with [re, im]
    rel: np.ndarray              # (R, d); ComplEx: (R, 2, d/2); RESCAL: (R, d, d)
    metadata: dict = field(default_factory=dict)

    @property
    def n_entities(self):
        return self.ent.shape[0]

    @property
    def n_relations(self):
        return self.rel.shape[0]


def _init_uniform(rng, shape, dim):
    bound = np.sqrt(6.0 / (2 * dim))
    return rng.uniform(-bound, bound, size=shape)


def init_table(model, n_ent, n_rel, dim, rng):
    if model not in MODELS and model != "random":
        raise ConfigError("unknown embedding model %r" % model)
    if dim <= 0:
        raise ConfigError("embedding dimension must be positive")
    if model == "ComplEx":
        if dim % 2:
            raise ConfigError("ComplEx requires an even dimension")
        ent = _init_uniform(rng, (n_ent, 2, dim // 2), dim)
        rel = _init_uniform(rng, (n_rel, 2, dim // 2), dim)
    elif model == "RESCAL":
        ent = _init_uniform(rng, (n_ent, dim), dim)
        rel = _init_uniform(rng, (n_rel, dim, dim), dim)
    else:
        ent = _init_uniform(rng, (n_ent, dim), dim)
        rel = _init_uniform(rng, (n_rel, dim), dim)
    return EmbeddingTable(model, dim, ent, rel)


def random_table(n_ent, n_rel, dim, seed=0):
    """Seeded i.i.d. table from the initialization distribution (no training)."""
    rng = np.random.default_rng(seed)
    table = EmbeddingTable("random", dim, _init_uniform(rng, (n_ent, dim), dim),
                           _init_uniform(rng, (n_rel, dim), dim))
    table.metadata = {"model": "random", "dim": dim, "seed": seed}
    return table


# ---------------------------------------------------------------------------
# scoring


def score_batch(table, h, r, t):
    """Model score for index arrays (higher = more plausible)."""
    h = np.asarray(h, dtype=np.intp)
    r = np.asarray(r, dtype=np.intp)
    t = np.asarray(t, dtype=np.intp)
    m = table.model
    if m == "TransE":
        return -np.linalg.norm(table.ent[h] + table.rel[r] - table.ent[t], axis=-1)
    if m == "DistMult" or m == "random":
        return np.sum(table.ent[h] * table.rel[r] * table.ent[t], axis=-1)
    if m == "ComplEx":
        hr, hi = table.ent[h, 0], table.ent[h, 1]
        rr, ri = table.rel[r, 0], table.rel[r, 1]
        tr, ti = table.ent[t, 0], table.ent[t, 1]
        return np.sum(hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr, axis=-1)
    if m == "RESCAL":
        return np.einsum("bi,bij,bj->b", table.ent[h], table.rel[r], table.ent[t])
    raise ConfigError("unknown embedding model %r" % m)


def score(table, h, r, t):
    return float(score_batch(table, [h], [r], [t])[0])


def score_candidates(table, head, relation, candidates):
    cands = np.asarray(candidates, dtype=np.intp)
    h = np.full(cands.shape, head, dtype=np.intp)
    r = np.full(cands.shape, relation, dtype=np.intp)
    return score_batch(table, h, r, cands)


# ---------------------------------------------------------------------------
# training


def _sample_negatives(rng, pos, n_ent, mode, k):
    """Corrupted copies of each positive; mode: tail, head or both."""
    n = pos.shape[0] * k
    neg = np.repeat(pos, k, axis=0)
    corrupt = rng.integers(n_ent, size=n)
    if mode == "tail":
        neg[:, 2] = corrupt
    elif mode == "head":
        neg[:, 0] = corrupt
    elif mode == "both":
        pick_tail = rng.random(n) < 0.5
        neg[pick_tail, 2] = corrupt[pick_tail]
        neg[~pick_tail, 0] = corrupt[~pick_tail]
    else:
        raise ConfigError("corruption mode must be tail, head or both")
    return neg


def train_embeddings(triples, n_ent, n_rel, model="TransE", dim=100, epochs=1000,
                     lr=0.01, neg_ratio=2, corruption="tail", margin=1.0,
                     reg=1e-4, batch_size=512, seed=0):
    """Train a baseline model with minibatch SGD; returns (table, epoch losses)."""
    if epochs <= 0:
        raise ConfigError("epochs must be positive")
    if neg_ratio < 1:
        raise ConfigError("need at least one negative per positive")
    rng = np.random.default_rng(seed)
    table = init_table(model, n_ent, n_rel, dim, rng)
    if model == "TransE":
        table.ent /= np.linalg.norm(table.ent, axis=1, keepdims=True)
    data = np.array([[h, r, t] for h, r, t in triples], dtype=np.intp)
    if data.size == 0:
        raise DataError("no training triples")

    losses = []
    for _ in range(epochs):
        order = rng.permutation(data.shape[0])
        epoch_loss = 0.0
        for start in range(0, data.shape[0], batch_size):
            batch = data[order[start:start + batch_size]]
            neg = _sample_negatives(rng, batch, n_ent, corruption, neg_ratio)
            if model == "TransE":
                epoch_loss += _step_transe(table, batch, neg, neg_ratio, lr, margin)
            elif model == "RESCAL":
                epoch_loss += _step_rescal(table, batch, neg, neg_ratio, lr, margin)
            else:
                epoch_loss += _step_logistic(table, batch, neg, lr, reg)
        losses.append(epoch_loss / data.shape[0])
    table.metadata = {"model": model, "dim": dim, "seed": seed, "epochs": epochs,
                      "neg_ratio": neg_ratio, "corruption": corruption}
    return table, losses


def _step_transe(table, pos, neg, k, lr, margin):
    E, R = table.ent, table.rel
    dp_vec = E[pos[:, 0]] + R[pos[:, 1]] - E[pos[:, 2]]
    dn_vec = E[neg[:, 0]] + R[neg[:, 1]] - E[neg[:, 2]]
    dp = np.linalg.norm(dp_vec, axis=1)
    dn = np.linalg.norm(dn_vec, axis=1)
    viol = margin + np.repeat(dp, k) - dn
    active = viol > 0
    loss = viol[active].sum()
    if loss > 0:
        up = dp_vec / np.maximum(dp, 1e-12)[:, None]
        un = dn_vec / np.maximum(dn, 1e-12)[:, None]
        wp = np.bincount(np.arange(pos.shape[0]).repeat(k)[active],
                         minlength=pos.shape[0]).astype(float)
        gp = up * wp[:, None] * lr
        gn = un[active] * lr
        np.add.at(E, pos[:, 0], -gp)
        np.add.at(E, pos[:, 2], gp)
        np.add.at(R, pos[:, 1], -gp)
        np.add.at(E, neg[active, 0], gn)
        np.add.at(E, neg[active, 2], -gn)
        np.add.at(R, neg[active, 1], gn)
        E /= np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
    return loss


def _step_rescal(table, pos, neg, k, lr, margin):
    E, M = table.ent, table.rel
    sp = np.einsum("bi,bij,bj->b", E[pos[:, 0]], M[pos[:, 1]], E[pos[:, 2]])
    sn = np.einsum("bi,bij,bj->b", E[neg[:, 0]], M[neg[:, 1]], E[neg[:, 2]])
    viol = margin + sn - np.repeat(sp, k)
    active = viol > 0
    loss = viol[active].sum()
    if loss > 0:
        wp = np.bincount(np.arange(pos.shape[0]).repeat(k)[active],
                         minlength=pos.shape[0]).astype(float)
        hp, tp, mp = E[pos[:, 0]], E[pos[:, 2]], M[pos[:, 1]]
        np.add.at(E, pos[:, 0], lr * wp[:, None] * np.einsum("bij,bj->bi", mp, tp))
        np.add.at(E, pos[:, 2], lr * wp[:, None] * np.einsum("bi,bij->bj", hp, mp))
        np.add.at(M, pos[:, 1], lr * wp[:, None, None] * np.einsum("bi,bj->bij", hp, tp))
        na = neg[active]
        hn, tn, mn = E[na[:, 0]], E[na[:, 2]], M[na[:, 1]]
        np.add.at(E, na[:, 0], -lr * np.einsum("bij,bj->bi", mn, tn))
        np.add.at(E, na[:, 2], -lr * np.einsum("bi,bij->bj", hn, mn))
        np.add.at(M, na[:, 1], -lr * np.einsum("bi,bj->bij", hn, tn))
        norms = np.linalg.norm(E, axis=1, keepdims=True)
        np.divide(E, norms, out=E, where=norms > 1.0)
    return loss


def _step_logistic(table, pos, neg, lr, reg):
    """Softplus logistic loss step for DistMult / ComplEx."""
    trip = np.concatenate([pos, neg], axis=0)
    y = np.concatenate([np.ones(pos.shape[0]), -np.ones(neg.shape[0])])
    s = score_batch(table, trip[:, 0], trip[:, 1], trip[:, 2])
    z = -y * s
    loss = np.logaddexp(0.0, z).sum()
    dl_ds = -y / (1.0 + np.exp(-z))       # sigmoid(z) * (-y)
    h, r, t = trip[:, 0], trip[:, 1], trip[:, 2]
    if table.model == "DistMult":
        E, R = table.ent, table.rel
        gh = dl_ds[:, None] * R[r] * E[t] + 2 * reg * E[h]
        gr = dl_ds[:, None] * E[h] * E[t] + 2 * reg * R[r]
        gt = dl_ds[:, None] * E[h] * R[r] + 2 * reg * E[t]
        np.add.at(E, h, -lr * gh)
        np.add.at(R, r, -lr * gr)
        np.add.at(E, t, -lr * gt)
    else:  # ComplEx
        E, R = table.ent, table.rel
        hr, hi = E[h, 0], E[h, 1]
        rr, ri = R[r, 0], R[r, 1]
        tr, ti = E[t, 0], E[t, 1]
        d = dl_ds[:, None]
        gh = np.stack([d * (rr * tr + ri * ti), d * (rr * ti - ri * tr)], axis=1) + 2 * reg * E[h]
        gr = np.stack([d * (hr * tr + hi * ti), d * (hr * ti - hi * tr)], axis=1) + 2 * reg * R[r]
        gt = np.stack([d * (hr * rr - hi * ri), d * (hi * rr + hr * ri)], axis=1) + 2 * reg * E[t]
        np.add.at(E, h, -lr * gh)
        np.add.at(R, r, -lr * gr)
        np.add.at(E, t, -lr * gt)
    return loss


# ---------------------------------------------------------------------------
# export to unified 1-D vectors


def export_vectors(table):
    """Flatten a trained table to one d-vector per entity and per relation.

    RESCAL relation matrices are mean-pooled row-wise; ComplEx vectors are the
    concatenation of the real and imaginary parts; TransE and DistMult are
    exported unchanged.
    """
    meta = dict(table.metadata)
    if table.model == "RESCAL":
        ent, rel = table.ent.copy(), table.rel.mean(axis=2)
        meta["rescal_pooling"] = "row-wise mean"
    elif table.model == "ComplEx":
        ent = table.ent.reshape(table.n_entities, table.dim).copy()
        rel = table.rel.reshape(table.n_relations, table.dim).copy()
        meta["complex_layout"] = "real ++ imaginary"
    else:
        ent, rel = table.ent.copy(), table.rel.copy()
    meta["exported_from"] = table.model
    return EmbeddingTable(table.model, table.dim, ent, rel, meta)


# ---------------------------------------------------------------------------
# persistence (checkpoint blob + JSON metadata header)


def save_table(path, table):
    autodiff.save_checkpoint(path, {"entities": table.ent, "relations": table.rel},
                             metadata={"model": table.model, "dim": table.dim,
                                       **table.metadata})


def load_table(path):
    arrays, meta = autodiff.load_checkpoint(path)
    return EmbeddingTable(meta["model"], int(meta["dim"]),
                          arrays["entities"], arrays["relations"], meta)
