"""Skip-gram embeddings with negative sampling, trained by explicit SGD.

The same trainer runs over token sequences (text embeddings) and over node
id sequences produced by graph walks; callers map their entities to integer
ids and back.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import Corpus
from .scores import ScoreMatrix
from .ioutil import load_arrays, save_arrays


class EmbeddingTable:
    """Fixed-dimension vectors keyed by entity id (token or graph node)."""

    def __init__(self, ids, vectors: np.ndarray):
        self.ids = tuple(ids)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError("vectors must be a (n_ids, dim) matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding table contains non-finite values")
        self.dim = self.vectors.shape[1]
        self.index = {e: i for i, e in enumerate(self.ids)}

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.index

    def vector(self, entity_id: str) -> np.ndarray:
        try:
            return self.vectors[self.index[entity_id]]
        except KeyError:
            raise KeyError(f"no embedding for entity {entity_id!r}") from None

    def save(self, path: str | Path) -> None:
        save_arrays(path, {"vectors": self.vectors}, meta={"ids": list(self.ids)})

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        arrays, meta = load_arrays(path)
        return cls(meta["ids"], arrays["vectors"])


class SkipGramTrainer:
    """Skip-gram with negative sampling over integer sequences.

    One SGD step per center position: all in-window contexts plus their
    negative draws form the step's targets. Negatives follow the unigram^0.75
    distribution. Fully deterministic for a given seed.
    """

    def __init__(self, vocab_size: int, dim: int, window: int, neg: int, lr: float, seed: int,
                 counts: np.ndarray | None = None):
        if vocab_size < neg + 1:
            raise ValueError(f"vocabulary size {vocab_size} must be at least neg+1 = {neg + 1}")
        self.vocab_size = vocab_size
        self.dim = dim
        self.window = window
        self.neg = neg
        self.lr = lr
        self.rng = np.random.default_rng(seed)
        self.w_in = self.rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim))
        self.w_out = np.zeros((vocab_size, dim))
        self._noise_cum = None
        if counts is not None:
            self.set_noise_distribution(counts)

    def set_noise_distribution(self, counts: np.ndarray) -> None:
        weights = np.asarray(counts, dtype=np.float64) ** 0.75
        total = weights.sum()
        if total <= 0:
            raise ValueError("noise distribution needs at least one positive count")
        self._noise_cum = np.cumsum(weights / total)

    def _draw_negatives(self, n: int) -> np.ndarray:
        return np.searchsorted(self._noise_cum, self.rng.random(n))

    def loss_on_pairs(self, centers: np.ndarray, contexts: np.ndarray,
                      negatives: np.ndarray) -> float:
        """Mean binary objective on a fixed batch (contexts positive, negatives
        per pair negative); used for training sanity checks."""
        h = self.w_in[centers]
        pos = _log_sigmoid(np.einsum("id,id->i", h, self.w_out[contexts]))
        neg_scores = np.einsum("id,ind->in", h, self.w_out[negatives])
        neg = _log_sigmoid(-neg_scores).sum(axis=1)
        return float(-(pos + neg).mean())

    def train_epoch(self, sequences: list[np.ndarray]) -> float:
        """One pass over all sequences in seeded shuffled order; returns the
        mean per-pair loss observed during the epoch."""
        if self._noise_cum is None:
            raise RuntimeError("noise distribution not set")
        order = self.rng.permutation(len(sequences))
        loss_sum, pair_count = 0.0, 0
        w = self.window
        for si in order:
            seq = sequences[si]
            n = len(seq)
            for i in range(n):
                lo, hi = max(0, i - w), min(n, i + w + 1)
                n_ctx = hi - lo - 1
                if n_ctx == 0:
                    continue
                contexts = np.concatenate([seq[lo:i], seq[i + 1:hi]])
                negs = self._draw_negatives(n_ctx * self.neg)
                targets = np.concatenate([contexts, negs])
                labels = np.zeros(len(targets))
                labels[:n_ctx] = 1.0

                center = seq[i]
                h = self.w_in[center]
                out_rows = self.w_out[targets]
                scores = out_rows @ h
                probs = _sigmoid(scores)
                g = probs - labels

                loss_sum += float(-(_log_sigmoid(scores[:n_ctx]).sum()
                                    + _log_sigmoid(-scores[n_ctx:]).sum()))
                pair_count += n_ctx

                dh = g @ out_rows
                np.add.at(self.w_out, targets, -self.lr * g[:, None] * h[None, :])
                self.w_in[center] -= self.lr * dh
        return loss_sum / max(pair_count, 1)

    def train(self, sequences: list[np.ndarray], epochs: int) -> list[float]:
        return [self.train_epoch(sequences) for _ in range(epochs)]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    # log sigma(x) = -softplus(-x), overflow-safe
    return np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))


def train_text_embeddings(
    corpus: Corpus,
    dim: int = 32,
    window: int = 5,
    neg: int = 5,
    epochs: int = 3,
    lr: float = 0.05,
    seed: int = 0,
) -> EmbeddingTable:
    """Train token embeddings on in-document windows; table keyed by token."""
    docs = list(corpus.queries) + list(corpus.candidates)
    for doc in docs:
        if len(doc.token_ids) < 2:
            raise ValueError(f"document {doc.id!r} is shorter than 2 tokens")
    sequences = [np.array(d.token_ids, dtype=np.int64) for d in docs]
    counts = np.zeros(len(corpus.vocab))
    for seq in sequences:
        np.add.at(counts, seq, 1.0)
    trainer = SkipGramTrainer(len(corpus.vocab), dim, window, neg, lr, seed, counts=counts)
    trainer.train(sequences, epochs)
    return EmbeddingTable(corpus.vocab, trainer.w_in.copy())


def doc_vector(table: EmbeddingTable, tokens) -> np.ndarray:
    """Unweighted mean of the tokens' vectors; error if none is in the table."""
    rows = [table.index[t] for t in tokens if t in table.index]
    if not rows:
        raise ValueError(f"no embedding found for any of the tokens {list(tokens)[:5]!r}")
    return table.vectors[rows].mean(axis=0)


def node_feature_matrix(graph, corpus: Corpus, table: EmbeddingTable) -> np.ndarray:
    """Frozen input features per graph node: word nodes take their token
    vector, document nodes the mean of their tokens' vectors."""
    feats = np.zeros((graph.n_nodes, table.dim))
    for i, (ntype, key) in enumerate(graph.nodes):
        if ntype == "word":
            feats[i] = table.vector(key)
        else:
            doc = corpus.document(ntype, key)
            feats[i] = doc_vector(table, corpus.tokens(doc))
    return feats


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return mat / safe


def score_matrix_from_embeddings(
    table: EmbeddingTable, corpus: Corpus, mode: str, model_name: str | None = None
) -> ScoreMatrix:
    """Cosine score matrix from an embedding table.

    mode "doc-mean" averages token vectors per document; mode "node" looks
    up the graph node entity directly ("q:<id>" / "c:<id>"). Zero vectors
    score 0 against everything.
    """
    from .graph import node_entity_id  # local import avoids a cycle

    if mode == "doc-mean":
        def vec(doc):
            return doc_vector(table, corpus.tokens(doc))
    elif mode == "node":
        def vec(doc):
            return table.vector(node_entity_id(doc.role, doc.id))
    else:
        raise ValueError(f"unknown scoring mode {mode!r}")

    q_mat = _normalize_rows(np.stack([vec(d) for d in corpus.queries]))
    c_mat = _normalize_rows(np.stack([vec(d) for d in corpus.candidates]))
    values = q_mat @ c_mat.T
    name = model_name if model_name is not None else f"emb-{mode}"
    return ScoreMatrix(name, tuple(corpus.query_ids), tuple(corpus.candidate_ids), values)
