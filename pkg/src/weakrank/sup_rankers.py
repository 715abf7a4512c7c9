"""Supervised rankers trained on pseudo labels, plus their ensemble.

Three model families: a two-tower representation model over mean word
embeddings, an interaction model pooling word-by-word cosines through RBF
kernels, and a graph ranker aggregating sampled neighborhoods. All share a
RankerBackbone of frozen inputs (word embeddings, document means, kernel
feature caches) so per-episode models are cheap to create and train.
"""

from __future__ import annotations

import numpy as np

from .corpus import CANDIDATE, QUERY, Corpus
from .embeddings import EmbeddingTable, _sigmoid, node_feature_matrix
from .graph import HetGraph
from .ioutil import load_arrays, save_arrays
from .nncore import (
    OptimizerState,
    ParamTensor,
    cosine_rows_backward,
    cosine_rows_forward,
    default_kernel_bank,
    dense_backward,
    dense_forward,
    init_param,
    kernel_pool_backward,
    kernel_pool_forward,
    optimizer_step,
    zero_grads,
)
from .registry import SupModelSpec
from .sageops import build_neighbor_matrix, create_layers, sage_backward, sage_forward

CHECKPOINT_FORMAT_VERSION = 1

_EPS_LOG = 1e-10  # guard inside log of kernel features


def _softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class RankerBackbone:
    """Frozen inputs shared by every supervised ranker in a run.

    The table is recentered (mean word vector subtracted) before anything is
    derived from it: skip-gram geometry is strongly anisotropic, and without
    centering all document means collapse onto one direction, which starves
    tower and kernel models of usable input variation. The original table is
    kept for persistence.
    """

    def __init__(self, corpus: Corpus, table: EmbeddingTable, graph: HetGraph | None = None,
                 graph_sample_size: int = 10, graph_seed: int = 0, center: bool = True):
        self.corpus = corpus
        self.table = table
        self.centered = center
        if center:
            shifted = table.vectors - table.vectors.mean(axis=0)
            self.table = EmbeddingTable(table.ids, shifted)
        self.raw_table = table
        self.graph = graph
        self.graph_sample_size = graph_sample_size
        self.graph_seed = graph_seed

        self.query_row = {d.id: i for i, d in enumerate(corpus.queries)}
        self.cand_row = {d.id: i for i, d in enumerate(corpus.candidates)}
        self.q_means = np.stack([self._doc_mean(d) for d in corpus.queries])
        self.c_means = np.stack([self._doc_mean(d) for d in corpus.candidates])

        self._word_hats: dict[str, list[np.ndarray]] | None = None
        self._phi_cache: dict = {}
        self._graph_inputs = None

    def _doc_mean(self, doc) -> np.ndarray:
        rows = [self.table.index[t] for t in self.corpus.tokens(doc) if t in self.table.index]
        if not rows:
            raise ValueError(f"document {doc.id!r} has no tokens in the embedding table")
        return self.table.vectors[rows].mean(axis=0)

    def _doc_word_hats(self) -> dict[str, list[np.ndarray]]:
        if self._word_hats is None:
            def hats(doc):
                rows = [self.table.index[t] for t in self.corpus.tokens(doc)]
                vecs = self.table.vectors[rows]
                norms = np.linalg.norm(vecs, axis=1, keepdims=True)
                return vecs / np.where(norms > 0, norms, 1.0)

            self._word_hats = {
                QUERY: [hats(d) for d in self.corpus.queries],
                CANDIDATE: [hats(d) for d in self.corpus.candidates],
            }
        return self._word_hats

    def phi_features(self, mus, sigmas, negative_exponent: bool = True) -> np.ndarray:
        """Kernel-pooled match features for every (query, candidate) pair.

        phi[i, j, h] = sum over query words of log(K_h(similarity row) + eps).
        Cached per kernel bank; word embeddings are frozen so this never
        changes within a run.
        """
        key = (tuple(np.asarray(mus)), tuple(np.asarray(sigmas)), negative_exponent)
        if key in self._phi_cache:
            return self._phi_cache[key]
        mus = np.asarray(mus, dtype=np.float64)
        sigmas = np.asarray(sigmas, dtype=np.float64)
        if np.any(sigmas <= 0):
            raise ValueError("kernel sigmas must be positive")
        sign = -1.0 if negative_exponent else 1.0

        hats = self._doc_word_hats()
        c_hats = hats[CANDIDATE]
        n_q, n_c, H = len(self.corpus.queries), len(self.corpus.candidates), len(mus)
        m_max = max(h.shape[0] for h in c_hats)
        dim = self.table.dim
        c_pad = np.zeros((n_c, m_max, dim))
        c_mask = np.zeros((n_c, m_max))
        for j, h in enumerate(c_hats):
            c_pad[j, : h.shape[0]] = h
            c_mask[j, : h.shape[0]] = 1.0

        phi = np.empty((n_q, n_c, H))
        for i, q_hat in enumerate(hats[QUERY]):
            S = np.einsum("nd,cmd->cnm", q_hat, c_pad)  # (n_c, N_i, m_max)
            feats = np.empty((n_c, q_hat.shape[0], H))
            for h in range(H):
                g = np.exp(sign * (S - mus[h]) ** 2 / (2.0 * sigmas[h] ** 2))
                feats[:, :, h] = (g * c_mask[:, None, :]).sum(axis=2)
            phi[i] = np.log(feats + _EPS_LOG).sum(axis=1)
        self._phi_cache[key] = phi
        return phi

    def graph_inputs(self):
        """(neighbor matrix, node features, node index arrays) for graph rankers."""
        if self.graph is None:
            raise ValueError("backbone was built without a graph")
        if self._graph_inputs is None:
            rng = np.random.default_rng(self.graph_seed)
            A = build_neighbor_matrix(self.graph, self.graph_sample_size, rng)
            features = node_feature_matrix(self.graph, self.corpus, self.table)
            q_nodes = np.array(
                [self.graph.node_index(QUERY, d.id) for d in self.corpus.queries]
            )
            c_nodes = np.array(
                [self.graph.node_index(CANDIDATE, d.id) for d in self.corpus.candidates]
            )
            self._graph_inputs = (A, features, q_nodes, c_nodes)
        return self._graph_inputs


def _pairwise_loss_grads(r_pos: np.ndarray, r_neg: np.ndarray):
    """Mean pairwise logistic objective and its gradients w.r.t. the scores.

    Maximizing log sigma(r+) + log(1 - sigma(r-)) is minimizing
    softplus(-r+) + softplus(r-); the gradient w.r.t. r is sigma(r) - target.
    """
    B = len(r_pos)
    loss = float((_softplus(-r_pos) + _softplus(r_neg)).mean())
    d_pos = (_sigmoid(r_pos) - 1.0) / B
    d_neg = _sigmoid(r_neg) / B
    return loss, d_pos, d_neg


class RepresentationRanker:
    """Two dense tanh layers per side over mean word embeddings, then cosine."""

    kind = "representation"

    def __init__(self, backbone: RankerBackbone, spec: SupModelSpec, seed: int):
        self.backbone = backbone
        self.spec = spec
        self.seed = seed
        hidden = spec.params.get("hidden", 32)
        d0 = backbone.table.dim
        rng = np.random.default_rng(seed)
        self.sides = {}
        for side in ("q", "c"):
            self.sides[side] = [
                init_param(f"rep.{side}.W1", (hidden, d0), rng),
                init_param(f"rep.{side}.b1", (hidden,), rng),
                init_param(f"rep.{side}.W2", (hidden, hidden), rng),
                init_param(f"rep.{side}.b2", (hidden,), rng),
            ]

    def params(self) -> list[ParamTensor]:
        return self.sides["q"] + self.sides["c"]

    def after_update(self) -> None:
        pass

    def _tower(self, X: np.ndarray, side: str):
        W1, b1, W2, b2 = self.sides[side]
        h1, cache1 = dense_forward(X, W1, b1, "tanh")
        y, cache2 = dense_forward(h1, W2, b2, "tanh")
        return y, (cache1, cache2)

    def _tower_backward(self, dy: np.ndarray, caches) -> None:
        cache1, cache2 = caches
        dh1 = dense_backward(dy, cache2)
        dense_backward(dh1, cache1)

    def score_pairs(self, query_id: str, candidate_ids) -> np.ndarray:
        xq = self.backbone.q_means[self.backbone.query_row[query_id]]
        yq, _ = self._tower(xq, "q")
        rows = [self.backbone.cand_row[c] for c in candidate_ids]
        yc, _ = self._tower(self.backbone.c_means[rows], "c")
        scores, _ = cosine_rows_forward(np.tile(yq, (len(rows), 1)), yc)
        return scores

    def score(self, query_id: str, candidate_id: str) -> float:
        return float(self.score_pairs(query_id, [candidate_id])[0])

    def loss_and_grads(self, triples) -> float:
        qrows = [self.backbone.query_row[q] for q, _, _ in triples]
        prows = [self.backbone.cand_row[p] for _, p, _ in triples]
        nrows = [self.backbone.cand_row[n] for _, _, n in triples]
        yq, qcache = self._tower(self.backbone.q_means[qrows], "q")
        yp, pcache = self._tower(self.backbone.c_means[prows], "c")
        yn, ncache = self._tower(self.backbone.c_means[nrows], "c")
        r_pos, cache_p = cosine_rows_forward(yq, yp)
        r_neg, cache_n = cosine_rows_forward(yq, yn)
        loss, d_pos, d_neg = _pairwise_loss_grads(r_pos, r_neg)
        dyq_p, dyp = cosine_rows_backward(d_pos, cache_p)
        dyq_n, dyn = cosine_rows_backward(d_neg, cache_n)
        self._tower_backward(dyq_p + dyq_n, qcache)
        self._tower_backward(dyp, pcache)
        self._tower_backward(dyn, ncache)
        if not np.isfinite(loss):
            raise ValueError(f"non-finite loss in {self.kind} ranker on a batch of {len(triples)}")
        return loss


class InteractionRanker:
    """Kernel-pooled word interactions mapped to a score by one linear layer."""

    kind = "interaction"

    def __init__(self, backbone: RankerBackbone, spec: SupModelSpec, seed: int):
        self.backbone = backbone
        self.spec = spec
        self.seed = seed
        mus, sigmas = default_kernel_bank()
        self.mus = np.asarray(spec.params.get("mus", mus), dtype=np.float64)
        self.sigmas = np.asarray(spec.params.get("sigmas", sigmas), dtype=np.float64)
        self.negative_exponent = bool(spec.params.get("negative_exponent", True))
        self.phi = backbone.phi_features(self.mus, self.sigmas, self.negative_exponent)
        rng = np.random.default_rng(seed)
        H = len(self.mus)
        self.w = init_param("inter.w", (H,), rng)
        self.b = init_param("inter.b", (1,), rng)

    def params(self) -> list[ParamTensor]:
        return [self.w, self.b]

    def after_update(self) -> None:
        pass

    def score_pairs(self, query_id: str, candidate_ids) -> np.ndarray:
        qi = self.backbone.query_row[query_id]
        cols = [self.backbone.cand_row[c] for c in candidate_ids]
        return self.phi[qi, cols] @ self.w.value + self.b.value[0]

    def score(self, query_id: str, candidate_id: str) -> float:
        return float(self.score_pairs(query_id, [candidate_id])[0])

    def loss_and_grads(self, triples) -> float:
        qrows = [self.backbone.query_row[q] for q, _, _ in triples]
        prows = [self.backbone.cand_row[p] for _, p, _ in triples]
        nrows = [self.backbone.cand_row[n] for _, _, n in triples]
        phi_p = self.phi[qrows, prows]
        phi_n = self.phi[qrows, nrows]
        r_pos = phi_p @ self.w.value + self.b.value[0]
        r_neg = phi_n @ self.w.value + self.b.value[0]
        loss, d_pos, d_neg = _pairwise_loss_grads(r_pos, r_neg)
        self.w.grad += d_pos @ phi_p + d_neg @ phi_n
        self.b.grad += d_pos.sum() + d_neg.sum()
        if not np.isfinite(loss):
            raise ValueError(f"non-finite loss in {self.kind} ranker on a batch of {len(triples)}")
        return loss


def interaction_score_from_embeddings(q_vecs: np.ndarray, c_vecs: np.ndarray, mus, sigmas,
                                      w: ParamTensor, b: ParamTensor,
                                      negative_exponent: bool = True):
    """Reference interaction scorer differentiable down to raw word vectors.

    Returns (score, d_score/d_q_vecs, d_score/d_c_vecs) and accumulates into
    w.grad / b.grad. Zero-norm word vectors contribute all-zero similarity
    rows or columns.
    """
    q_vecs = np.asarray(q_vecs, dtype=np.float64)
    c_vecs = np.asarray(c_vecs, dtype=np.float64)

    def normalize(v):
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        return v / safe, norms[:, 0]

    q_hat, q_norm = normalize(q_vecs)
    c_hat, c_norm = normalize(c_vecs)
    S = q_hat @ c_hat.T  # (N, M)

    H = len(mus)
    K_rows, caches = [], []
    for i in range(S.shape[0]):
        K, cache = kernel_pool_forward(S[i], mus, sigmas, negative_exponent)
        K_rows.append(K)
        caches.append(cache)
    K_mat = np.stack(K_rows)  # (N, H)
    phi = np.log(K_mat + _EPS_LOG).sum(axis=0)  # (H,)
    score = float(w.value @ phi + b.value[0])

    # backward: d score / d phi = w
    w.grad += phi
    b.grad += 1.0
    dK = w.value[None, :] / (K_mat + _EPS_LOG)  # (N, H)
    dS = np.stack([kernel_pool_backward(dK[i], caches[i]) for i in range(S.shape[0])])
    dq_hat = dS @ c_hat
    dc_hat = dS.T @ q_hat

    def denormalize(d_hat, v_hat, norm):
        # d/dv of v/|v| applied to upstream d_hat; zero-norm rows get no grad
        safe = np.where(norm > 0, norm, 1.0)[:, None]
        dv = (d_hat - v_hat * np.einsum("id,id->i", v_hat, d_hat)[:, None]) / safe
        dv[norm == 0] = 0.0
        return dv

    return score, denormalize(dq_hat, q_hat, q_norm), denormalize(dc_hat, c_hat, c_norm)


class GraphAggregationRanker:
    """Sampled-neighborhood mean aggregation; cosine of final embeddings."""

    kind = "graph-aggregation"

    def __init__(self, backbone: RankerBackbone, spec: SupModelSpec, seed: int):
        self.backbone = backbone
        self.spec = spec
        self.seed = seed
        A, features, q_nodes, c_nodes = backbone.graph_inputs()
        self.A = A
        self.features = features
        self.q_nodes = q_nodes
        self.c_nodes = c_nodes
        hidden = spec.params.get("hidden", 32)
        out_dim = spec.params.get("out_dim", 32)
        n_layers = spec.params.get("n_layers", 2)
        d0 = features.shape[1]
        dims = [d0] + [hidden] * max(0, n_layers - 1) + ([out_dim] if n_layers else [])
        rng = np.random.default_rng(seed)
        self.layers = create_layers("sup-agg", dims, rng)
        self._Z: np.ndarray | None = None

    def params(self) -> list[ParamTensor]:
        return list(self.layers)

    def after_update(self) -> None:
        self._Z = None

    def _embeddings(self) -> np.ndarray:
        if self._Z is None:
            self._Z, _ = sage_forward(self.features, self.A, self.layers)
        return self._Z

    def score_pairs(self, query_id: str, candidate_ids) -> np.ndarray:
        Z = self._embeddings()
        qn = self.q_nodes[self.backbone.query_row[query_id]]
        cn = self.c_nodes[[self.backbone.cand_row[c] for c in candidate_ids]]
        scores, _ = cosine_rows_forward(np.tile(Z[qn], (len(cn), 1)), Z[cn])
        return scores

    def score(self, query_id: str, candidate_id: str) -> float:
        return float(self.score_pairs(query_id, [candidate_id])[0])

    def loss_and_grads(self, triples) -> float:
        Z, caches = sage_forward(self.features, self.A, self.layers)
        qn = self.q_nodes[[self.backbone.query_row[q] for q, _, _ in triples]]
        pn = self.c_nodes[[self.backbone.cand_row[p] for _, p, _ in triples]]
        nn = self.c_nodes[[self.backbone.cand_row[n] for _, _, n in triples]]
        r_pos, cache_p = cosine_rows_forward(Z[qn], Z[pn])
        r_neg, cache_n = cosine_rows_forward(Z[qn], Z[nn])
        loss, d_pos, d_neg = _pairwise_loss_grads(r_pos, r_neg)
        dZq_p, dZp = cosine_rows_backward(d_pos, cache_p)
        dZq_n, dZn = cosine_rows_backward(d_neg, cache_n)
        dZ = np.zeros_like(Z)
        np.add.at(dZ, qn, dZq_p + dZq_n)
        np.add.at(dZ, pn, dZp)
        np.add.at(dZ, nn, dZn)
        sage_backward(dZ, self.A, caches)
        if not np.isfinite(loss):
            raise ValueError(f"non-finite loss in {self.kind} ranker on a batch of {len(triples)}")
        return loss


_MODEL_CLASSES = {
    "representation": RepresentationRanker,
    "interaction": InteractionRanker,
    "graph-aggregation": GraphAggregationRanker,
}


def create_sup_model(spec: SupModelSpec, backbone: RankerBackbone, seed: int):
    return _MODEL_CLASSES[spec.kind](backbone, spec, seed)


def train_supervised(
    model,
    triples,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    algorithm: str = "adam",
    eval_fn=None,
    patience: int = 0,
    optimizer_state: OptimizerState | None = None,
) -> list[float]:
    """Seeded minibatch training on (query, positive, negative) triples.

    Returns the per-epoch mean objective. With ``eval_fn`` the best-scoring
    parameters are restored at the end, and training stops early once the
    metric fails to improve for ``patience`` consecutive epochs (patience 0
    disables early stopping but still restores the best). Passing an
    ``optimizer_state`` lets the caller keep it (e.g. for checkpointing) or
    resume a previous run; it overrides ``lr`` and ``algorithm``.
    """
    if not triples:
        raise ValueError("empty training stream")
    triples = list(triples)
    rng = np.random.default_rng(seed)
    opt = optimizer_state if optimizer_state is not None else OptimizerState(algorithm, lr=lr)
    params = model.params()
    curve = []
    best_metric, best_values, stale = -np.inf, None, 0
    for _ in range(epochs):
        order = rng.permutation(len(triples))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [triples[i] for i in order[start:start + batch_size]]
            zero_grads(params)
            losses.append(model.loss_and_grads(batch))
            optimizer_step(params, opt)
            model.after_update()
        curve.append(float(np.mean(losses)))
        if eval_fn is not None:
            metric = float(eval_fn(model))
            if metric > best_metric:
                best_metric, stale = metric, 0
                best_values = [p.value.copy() for p in params]
            else:
                stale += 1
                if patience and stale >= patience:
                    break
    if eval_fn is not None and best_values is not None:
        for p, v in zip(params, best_values):
            np.copyto(p.value, v)
        model.after_update()
    return curve


def _min_max(row: np.ndarray) -> np.ndarray:
    lo, hi = row.min(), row.max()
    if hi == lo:
        return np.full_like(row, 0.5)
    return (row - lo) / (hi - lo)


def ensemble_scores(models, query_id: str, candidate_ids) -> np.ndarray:
    """Mean of member scores, each min-max scaled over the candidate list."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    rows = [_min_max(m.score_pairs(query_id, candidate_ids)) for m in models]
    return np.mean(rows, axis=0)


def score_lists_with_ensemble(lists, models) -> list[np.ndarray]:
    return [ensemble_scores(models, el.query_id, el.candidate_ids) for el in lists]


def save_checkpoint(model, path, config_hash: str = "",
                    optimizer_state: OptimizerState | None = None) -> None:
    """Self-describing parameter container; load requires the same backbone.

    Holds shapes and values of every parameter, the model's hyperparameters
    and seed, the creating configuration hash, and (when given) the optimizer
    state so training can resume.
    """
    arrays = {p.name: p.value for p in model.params()}
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {
            "algorithm": optimizer_state.algorithm,
            "lr": optimizer_state.lr,
            "beta1": optimizer_state.beta1,
            "beta2": optimizer_state.beta2,
            "eps": optimizer_state.eps,
            "t": optimizer_state.t,
            "moment_names": sorted(optimizer_state.moments),
        }
        for name in opt_meta["moment_names"]:
            m, v = optimizer_state.moments[name]
            arrays[f"opt.m.{name}"] = m
            arrays[f"opt.v.{name}"] = v
    save_arrays(path, arrays, meta={
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": model.kind,
        "name": model.spec.name,
        "params": model.spec.params,
        "seed": model.seed,
        "config_hash": config_hash,
        "optimizer": opt_meta,
    })


def load_checkpoint(path, backbone: RankerBackbone, with_optimizer: bool = False):
    arrays, meta = load_arrays(path)
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {meta.get('format_version')!r}")
    spec = SupModelSpec(meta["name"], meta["kind"], meta["params"])
    model = create_sup_model(spec, backbone, meta["seed"])
    for p in model.params():
        if p.name not in arrays:
            raise ValueError(f"checkpoint missing parameter {p.name!r}")
        if arrays[p.name].shape != p.value.shape:
            raise ValueError(f"checkpoint parameter {p.name!r} has wrong shape")
        np.copyto(p.value, arrays[p.name])
    model.after_update()
    if not with_optimizer:
        return model
    opt_meta = meta.get("optimizer")
    state = None
    if opt_meta is not None:
        state = OptimizerState(opt_meta["algorithm"], lr=opt_meta["lr"],
                               beta1=opt_meta["beta1"], beta2=opt_meta["beta2"],
                               eps=opt_meta["eps"], t=opt_meta["t"])
        for name in opt_meta["moment_names"]:
            state.moments[name] = (arrays[f"opt.m.{name}"], arrays[f"opt.v.{name}"])
    return model, state
