"""Ranking metrics under the 1-positive-plus-sampled-negatives protocol."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import AnnotationSet, Corpus
from .scores import ScoreMatrix


@dataclass(frozen=True)
class EvalList:
    """One positive plus its sampled negative candidates for a query."""

    query_id: str
    positive_id: str
    negative_ids: tuple[str, ...]

    def __post_init__(self):
        if self.positive_id in self.negative_ids:
            raise ValueError(f"positive {self.positive_id!r} appears among negatives")
        if len(set(self.negative_ids)) != len(self.negative_ids):
            raise ValueError("negative ids contain duplicates")

    @property
    def candidate_ids(self) -> tuple[str, ...]:
        return (self.positive_id,) + self.negative_ids


def build_eval_lists(
    annotations: AnnotationSet, corpus: Corpus, seed: int, n_negatives: int = 99
) -> list[EvalList]:
    """One list per (query, positive) pair with seeded uniform negatives.

    Negatives are drawn from candidates not annotated positive for that
    query, so a query's other positives never appear as its negatives.
    """
    rng = np.random.default_rng(seed)
    all_cands = np.array(corpus.candidate_ids)
    pos_by_query: dict[str, list[str]] = {}
    for qid, cid, label in annotations.pairs:
        if label == 1:
            pos_by_query.setdefault(qid, []).append(cid)

    lists = []
    for qid in annotations.query_ids:
        positives = pos_by_query.get(qid, [])
        if not positives:
            raise ValueError(f"annotated query {qid!r} has no positive candidate")
        pos_set = set(positives)
        eligible = all_cands[[c not in pos_set for c in all_cands]]
        if len(eligible) < n_negatives:
            raise ValueError(
                f"query {qid!r} has only {len(eligible)} eligible negatives, "
                f"needs {n_negatives}"
            )
        for pos in positives:
            draw = rng.choice(len(eligible), size=n_negatives, replace=False)
            lists.append(EvalList(qid, pos, tuple(eligible[np.sort(draw)])))
    return lists


def rank_of_positive(eval_list: EvalList, scores: np.ndarray) -> int:
    """1-based rank of the positive, descending score, ties by id ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = eval_list.candidate_ids
    if len(scores) != len(ids):
        raise ValueError(f"got {len(scores)} scores for {len(ids)} candidates")
    pos_score = scores[0]
    neg_scores = scores[1:]
    above = int(np.count_nonzero(neg_scores > pos_score))
    tied = neg_scores == pos_score
    if tied.any():
        neg_ids = np.asarray(eval_list.negative_ids, dtype=object)
        above += int(np.count_nonzero(neg_ids[tied] < eval_list.positive_id))
    return 1 + above


def _ranks(lists, scores) -> np.ndarray:
    if len(lists) != len(scores):
        raise ValueError("need one score row per eval list")
    return np.array([rank_of_positive(el, s) for el, s in zip(lists, scores)])


def hr_at_k(lists, scores, k: int = 5) -> float:
    """Fraction of lists whose positive ranks within the top k."""
    return float(np.mean(_ranks(lists, scores) <= k))


def ndcg_at_k(lists, scores, k: int = 5) -> float:
    """Single-positive discounted gain: 1/log2(rank+1) inside the cutoff."""
    ranks = _ranks(lists, scores)
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def mrr(lists, scores) -> float:
    """Mean reciprocal rank of the positive, no cutoff."""
    return float(np.mean(1.0 / _ranks(lists, scores)))


def all_metrics(lists, scores, k: int = 5) -> dict:
    ranks = _ranks(lists, scores)
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return {
        f"hr@{k}": float(np.mean(ranks <= k)),
        f"ndcg@{k}": float(np.mean(gains)),
        "mrr": float(np.mean(1.0 / ranks)),
        "n_lists": len(lists),
    }


def score_lists_with_matrix(lists, matrix: ScoreMatrix) -> list[np.ndarray]:
    """Look up each list's candidate scores in a score matrix."""
    out = []
    for el in lists:
        row = matrix.row(el.query_id)
        cols = matrix.columns_for(el.candidate_ids)
        out.append(row[cols])
    return out
