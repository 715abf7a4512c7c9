"""Planted-topic corpus generator with analytically known ground truth.

Each document belongs to one topic and draws tokens from that topic's
private vocabulary, except for a noise fraction drawn from a pool shared by
all topics. A (query, candidate) pair is relevant iff the topics match, so
generated corpora come with exact labels for free.
"""

from __future__ import annotations

import numpy as np

from .corpus import CANDIDATE, QUERY, AnnotationSet, Corpus, build_corpus

# Shared noise pool size relative to the per-topic vocabulary.
COMMON_VOCAB_FACTOR = 2


def generate_synthetic(
    n_queries: int,
    n_candidates: int,
    n_topics: int,
    vocab_per_topic: int,
    doc_len: int,
    noise_rate: float,
    seed: int,
) -> tuple[Corpus, AnnotationSet]:
    """Generate a corpus of planted-topic documents plus full annotations.

    Topic assignments are balanced (counts differ by at most one) but
    seed-shuffled. Token draws are i.i.d.: topic vocabulary with probability
    1 - noise_rate, shared pool otherwise. Annotations list every same-topic
    (query, candidate) pair with label 1.
    """
    if n_topics < 2:
        raise ValueError("need at least 2 topics")
    if not 0 <= noise_rate < 1:
        raise ValueError("noise_rate must lie in [0, 1)")
    if doc_len * (1.0 - noise_rate) < 3:
        raise ValueError(
            f"expected topic-token count per document is {doc_len * (1 - noise_rate):.2f} < 3; "
            "increase doc_len or lower noise_rate"
        )
    if n_queries < n_topics or n_candidates < n_topics:
        raise ValueError("each topic needs at least one query and one candidate")

    rng = np.random.default_rng(seed)
    topic_vocab = [
        [f"t{t}w{i:03d}" for i in range(vocab_per_topic)] for t in range(n_topics)
    ]
    common_vocab = [f"common{i:03d}" for i in range(COMMON_VOCAB_FACTOR * vocab_per_topic)]

    def assign_topics(n: int) -> np.ndarray:
        topics = np.arange(n) % n_topics
        rng.shuffle(topics)
        return topics

    query_topics = assign_topics(n_queries)
    cand_topics = assign_topics(n_candidates)

    def make_text(topic: int) -> str:
        words = []
        for _ in range(doc_len):
            if noise_rate > 0 and rng.random() < noise_rate:
                words.append(common_vocab[rng.integers(len(common_vocab))])
            else:
                words.append(topic_vocab[topic][rng.integers(vocab_per_topic)])
        return " ".join(words)

    raw_docs = []
    width_q = len(str(n_queries - 1))
    width_c = len(str(n_candidates - 1))
    for i in range(n_queries):
        raw_docs.append(
            {"id": f"q{i:0{width_q}d}", "role": QUERY, "text": make_text(int(query_topics[i]))}
        )
    for i in range(n_candidates):
        raw_docs.append(
            {"id": f"c{i:0{width_c}d}", "role": CANDIDATE, "text": make_text(int(cand_topics[i]))}
        )

    corpus = build_corpus(raw_docs, max_query_len=doc_len, max_candidate_len=doc_len)

    pairs = []
    for i in range(n_queries):
        qid = f"q{i:0{width_q}d}"
        for j in range(n_candidates):
            if query_topics[i] == cand_topics[j]:
                pairs.append((qid, f"c{j:0{width_c}d}", 1))
    annotations = AnnotationSet(tuple(pairs), "all")
    return corpus, annotations
