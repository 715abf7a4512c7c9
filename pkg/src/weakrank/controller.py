"""Three-step recurrent policy over pipeline configurations.

Step 1 samples a mask over unsupervised scorers (one two-way softmax head
applied to the elementwise product of the hidden state with each scorer's
embedding), step 2 samples the k category from a softmax head on the hidden
state, step 3 samples a mask over supervised rankers like step 1. The summed
representation of each step's selection feeds the next LSTM input. Policy
updates are plain REINFORCE with an optional moving-average baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .nncore import (
    LstmParams,
    ParamTensor,
    init_param,
    lstm_backward,
    lstm_forward,
    zero_grads,
)

log = logging.getLogger(__name__)

MAX_RESAMPLE = 10


@dataclass(frozen=True)
class Configuration:
    """One sampled weak-supervision pipeline: scorer mask, k, ranker mask."""

    unsup_mask: tuple[int, ...]
    k_index: int
    sup_mask: tuple[int, ...]
    k_value: int

    def __post_init__(self):
        if sum(self.unsup_mask) < 1 or sum(self.sup_mask) < 1:
            raise ValueError("masks must select at least one model")
        if any(v not in (0, 1) for v in self.unsup_mask + self.sup_mask):
            raise ValueError("masks must be binary")

    def to_dict(self) -> dict:
        return {
            "I1": list(self.unsup_mask),
            "k_index": self.k_index,
            "k": self.k_value,
            "I3": list(self.sup_mask),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Configuration":
        return cls(tuple(data["I1"]), data["k_index"], tuple(data["I3"]), data["k"])


@dataclass
class Clamp:
    """Fixes one or more steps for ablation runs; fixed steps are not sampled
    and contribute neither log-probability nor gradient."""

    unsup_mask: tuple[int, ...] | None = None
    k_index: int | None = None
    sup_mask: tuple[int, ...] | None = None


@dataclass
class BaselineState:
    """Exponential moving average of observed rewards."""

    value: float | None = None
    decay: float = 0.9

    def update(self, reward: float) -> None:
        if self.value is None:
            self.value = reward
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * reward


@dataclass
class EpisodeLog:
    episode: int
    config: Configuration
    log_prob: float
    reward_unsup: float
    reward_sup: float
    reward: float
    baseline: float

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "I1": list(self.config.unsup_mask),
            "k": self.config.k_value,
            "I3": list(self.config.sup_mask),
            "Ru": self.reward_unsup,
            "Rs": self.reward_sup,
            "R": self.reward,
            "baseline": self.baseline,
            "log_prob": self.log_prob,
        }


class ControllerParams:
    """LSTM weights plus per-choice embeddings and the three sampling heads."""

    def __init__(self, n_unsup: int, n_k: int, n_sup: int, hidden: int = 32, seed: int = 0):
        if min(n_unsup, n_k, n_sup) < 1:
            raise ValueError("registries and the k grid must be non-empty")
        self.n_unsup, self.n_k, self.n_sup = n_unsup, n_k, n_sup
        self.hidden = hidden
        rng = np.random.default_rng(seed)
        d = hidden
        self.lstm = LstmParams.create("ctrl.lstm", d, d, rng)
        self.x1 = init_param("ctrl.x1", (d,), rng)
        self.w_unsup = init_param("ctrl.w_unsup", (n_unsup, d), rng)
        self.z_k = init_param("ctrl.z_k", (n_k, d), rng)
        self.u_sup = init_param("ctrl.u_sup", (n_sup, d), rng)
        self.f_W = init_param("ctrl.f_W", (2, d), rng)
        self.f_b = init_param("ctrl.f_b", (2,), rng)
        self.g_W = init_param("ctrl.g_W", (n_k, d), rng)
        self.g_b = init_param("ctrl.g_b", (n_k,), rng)
        self.q_W = init_param("ctrl.q_W", (2, d), rng)
        self.q_b = init_param("ctrl.q_b", (2,), rng)

    def tensors(self) -> list[ParamTensor]:
        return self.lstm.tensors() + [
            self.x1, self.w_unsup, self.z_k, self.u_sup,
            self.f_W, self.f_b, self.g_W, self.g_b, self.q_W, self.q_b,
        ]


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _mask_head_probs(h: np.ndarray, emb: ParamTensor, W: ParamTensor, b: ParamTensor):
    """Per-choice two-way probabilities; column 1 is "select"."""
    prods = h[None, :] * emb.value  # (N, d)
    logits = prods @ W.value.T + b.value  # (N, 2)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite controller logits")
    return prods, _row_softmax(logits)


def _k_head_probs(h: np.ndarray, W: ParamTensor, b: ParamTensor) -> np.ndarray:
    logits = W.value @ h + b.value
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite controller logits")
    return _row_softmax(logits)


def _traverse(params: ControllerParams, decide_unsup, decide_k, decide_sup):
    """Run the three LSTM steps, deferring each decision to a callback.

    Returns everything the backward pass needs. Callbacks receive the step's
    probabilities and return the chosen mask / index.
    """
    d = params.hidden
    h0 = np.zeros(d)
    e0 = np.zeros(d)
    h1, e1, cache1 = lstm_forward(params.x1.value, h0, e0, params.lstm)
    prods1, probs1 = _mask_head_probs(h1, params.w_unsup, params.f_W, params.f_b)
    unsup_mask = np.asarray(decide_unsup(probs1), dtype=np.int64)

    x2 = unsup_mask.astype(np.float64) @ params.w_unsup.value
    h2, e2, cache2 = lstm_forward(x2, h1, e1, params.lstm)
    probs2 = _k_head_probs(h2, params.g_W, params.g_b)
    k_index = int(decide_k(probs2))

    x3 = params.z_k.value[k_index]
    h3, e3, cache3 = lstm_forward(x3, h2, e2, params.lstm)
    prods3, probs3 = _mask_head_probs(h3, params.u_sup, params.q_W, params.q_b)
    sup_mask = np.asarray(decide_sup(probs3), dtype=np.int64)

    return {
        "unsup_mask": unsup_mask, "k_index": k_index, "sup_mask": sup_mask,
        "caches": (cache1, cache2, cache3),
        "h": (h1, h2, h3),
        "prods": (prods1, prods3),
        "probs": (probs1, probs2, probs3),
    }


def _mask_log_prob(probs: np.ndarray, mask: np.ndarray) -> float:
    picked = np.where(mask == 1, probs[:, 1], probs[:, 0])
    return float(np.log(picked).sum())


def _log_prob_of(state, clamp: Clamp | None) -> float:
    clamp = clamp or Clamp()
    probs1, probs2, probs3 = state["probs"]
    total = 0.0
    if clamp.unsup_mask is None:
        total += _mask_log_prob(probs1, state["unsup_mask"])
    if clamp.k_index is None:
        total += float(np.log(probs2[state["k_index"]]))
    if clamp.sup_mask is None:
        total += _mask_log_prob(probs3, state["sup_mask"])
    return total


def _sample_mask(probs: np.ndarray, rng: np.random.Generator, step_name: str) -> np.ndarray:
    """Independent Bernoulli draws per choice; all-zero masks are redrawn up
    to MAX_RESAMPLE times, then the highest-probability choice is forced."""
    for _ in range(1 + MAX_RESAMPLE):
        mask = (rng.random(len(probs)) < probs[:, 1]).astype(np.int64)
        if mask.any():
            return mask
    forced = int(np.argmax(probs[:, 1]))
    mask = np.zeros(len(probs), dtype=np.int64)
    mask[forced] = 1
    log.info("all-zero %s mask after %d resamples; forcing choice %d",
             step_name, MAX_RESAMPLE, forced)
    return mask


def sample_configuration(
    params: ControllerParams,
    seed_or_rng,
    k_values,
    clamp: Clamp | None = None,
) -> tuple[Configuration, float]:
    """Sample one pipeline configuration; returns it with its log-probability.

    Clamped steps are taken as given and excluded from the log-probability.
    """
    rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
           else np.random.default_rng(seed_or_rng))
    clamp = clamp or Clamp()
    if len(k_values) != params.n_k:
        raise ValueError(f"expected {params.n_k} k values, got {len(k_values)}")

    def decide_unsup(probs):
        if clamp.unsup_mask is not None:
            return clamp.unsup_mask
        return _sample_mask(probs, rng, "unsupervised")

    def decide_k(probs):
        if clamp.k_index is not None:
            return clamp.k_index
        return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))

    def decide_sup(probs):
        if clamp.sup_mask is not None:
            return clamp.sup_mask
        return _sample_mask(probs, rng, "supervised")

    state = _traverse(params, decide_unsup, decide_k, decide_sup)
    config = Configuration(
        tuple(int(v) for v in state["unsup_mask"]),
        state["k_index"],
        tuple(int(v) for v in state["sup_mask"]),
        int(k_values[state["k_index"]]),
    )
    return config, _log_prob_of(state, clamp)


def action_log_prob(
    params: ControllerParams,
    config: Configuration,
    clamp: Clamp | None = None,
    grad_scale: float = 0.0,
    entropy_scale: float = 0.0,
) -> tuple[float, float]:
    """Replay the forward pass for a fixed configuration.

    Returns (log-probability, policy entropy at the visited states). When
    either scale is non-zero, accumulates the gradient of
    grad_scale * log pi + entropy_scale * entropy into the parameters.
    """
    clamp = clamp or Clamp()
    if len(config.unsup_mask) != params.n_unsup or len(config.sup_mask) != params.n_sup:
        raise ValueError("configuration masks do not match registry sizes")
    if not 0 <= config.k_index < params.n_k:
        raise ValueError(f"k index {config.k_index} out of range")

    state = _traverse(
        params,
        lambda probs: np.asarray(config.unsup_mask),
        lambda probs: config.k_index,
        lambda probs: np.asarray(config.sup_mask),
    )
    probs1, probs2, probs3 = state["probs"]
    log_prob = _log_prob_of(state, clamp)

    def head_entropy(p):
        return float(-(p * np.log(p + 1e-300)).sum())

    entropy = 0.0
    if clamp.unsup_mask is None:
        entropy += sum(head_entropy(p) for p in probs1)
    if clamp.k_index is None:
        entropy += head_entropy(probs2)
    if clamp.sup_mask is None:
        entropy += sum(head_entropy(p) for p in probs3)

    if grad_scale == 0.0 and entropy_scale == 0.0:
        return log_prob, entropy

    # --- backward ---------------------------------------------------------
    cache1, cache2, cache3 = state["caches"]
    h1, h2, h3 = state["h"]
    prods1, prods3 = state["prods"]

    def dlogits_for_mask(probs, mask, clamped):
        d = np.zeros_like(probs)
        if not clamped:
            if grad_scale != 0.0:
                onehot = np.zeros_like(probs)
                onehot[np.arange(len(mask)), mask] = 1.0
                d += grad_scale * (onehot - probs)
            if entropy_scale != 0.0:
                H = -(probs * np.log(probs + 1e-300)).sum(axis=1, keepdims=True)
                d += entropy_scale * (-probs * (np.log(probs + 1e-300) + H))
        return d

    # step 3 head
    d3 = dlogits_for_mask(probs3, state["sup_mask"], clamp.sup_mask is not None)
    params.q_W.grad += d3.T @ prods3
    params.q_b.grad += d3.sum(axis=0)
    dprods3 = d3 @ params.q_W.value  # (N_s, d)
    dh3 = (dprods3 * params.u_sup.value).sum(axis=0)
    params.u_sup.grad += dprods3 * h3[None, :]

    # step 2 head
    d2 = np.zeros_like(probs2)
    if clamp.k_index is None:
        if grad_scale != 0.0:
            onehot2 = np.zeros_like(probs2)
            onehot2[config.k_index] = 1.0
            d2 += grad_scale * (onehot2 - probs2)
        if entropy_scale != 0.0:
            H2 = -(probs2 * np.log(probs2 + 1e-300)).sum()
            d2 += entropy_scale * (-probs2 * (np.log(probs2 + 1e-300) + H2))
    params.g_W.grad += np.outer(d2, h2)
    params.g_b.grad += d2
    dh2 = params.g_W.value.T @ d2

    # step 1 head
    d1 = dlogits_for_mask(probs1, state["unsup_mask"], clamp.unsup_mask is not None)
    params.f_W.grad += d1.T @ prods1
    params.f_b.grad += d1.sum(axis=0)
    dprods1 = d1 @ params.f_W.value
    dh1 = (dprods1 * params.w_unsup.value).sum(axis=0)
    params.w_unsup.grad += dprods1 * h1[None, :]

    # backprop through time
    dx3, dh2_rec, de2 = lstm_backward(dh3, np.zeros(params.hidden), cache3)
    params.z_k.grad[config.k_index] += dx3
    dx2, dh1_rec, de1 = lstm_backward(dh2 + dh2_rec, de2, cache2)
    sel = np.asarray(config.unsup_mask, dtype=np.float64)
    params.w_unsup.grad += sel[:, None] * dx2[None, :]
    dx1, _, _ = lstm_backward(dh1 + dh1_rec, de1, cache1)
    params.x1.grad += dx1

    return log_prob, entropy


def reinforce_update(
    params: ControllerParams,
    config: Configuration,
    reward: float,
    baseline: BaselineState,
    lr: float,
    use_baseline: bool = True,
    entropy_coef: float = 0.0,
    clamp: Clamp | None = None,
) -> float:
    """One gradient-ascent step along (reward - baseline) * grad log pi.

    Returns the baseline value used for the advantage; the baseline state is
    updated with the reward after the step.
    """
    if not np.isfinite(reward):
        raise ValueError(f"non-finite reward {reward!r}")
    if use_baseline:
        if baseline.value is None:
            baseline.value = reward
        b = baseline.value
    else:
        b = 0.0
    advantage = reward - b
    if advantage != 0.0 or entropy_coef != 0.0:
        tensors = params.tensors()
        zero_grads(tensors)
        action_log_prob(params, config, clamp=clamp,
                        grad_scale=advantage, entropy_scale=entropy_coef)
        for p in tensors:
            if not np.all(np.isfinite(p.grad)):
                raise ValueError(f"non-finite controller gradient in {p.name!r}")
            p.value += lr * p.grad
    if use_baseline:
        baseline.update(reward)
    return b


def greedy_decode(params: ControllerParams, k_values, clamp: Clamp | None = None) -> Configuration:
    """Most-likely configuration step by step: select every choice with
    select-probability >= 0.5 (falling back to the single best choice for an
    empty mask) and the argmax k category."""
    clamp = clamp or Clamp()

    def decide_mask(probs, clamped):
        if clamped is not None:
            return clamped
        mask = (probs[:, 1] >= 0.5).astype(np.int64)
        if not mask.any():
            mask[int(np.argmax(probs[:, 1]))] = 1
        return mask

    state = _traverse(
        params,
        lambda probs: decide_mask(probs, clamp.unsup_mask),
        lambda probs: clamp.k_index if clamp.k_index is not None else int(np.argmax(probs)),
        lambda probs: decide_mask(probs, clamp.sup_mask),
    )
    return Configuration(
        tuple(int(v) for v in state["unsup_mask"]),
        state["k_index"],
        tuple(int(v) for v in state["sup_mask"]),
        int(k_values[state["k_index"]]),
    )


# ---------------------------------------------------------------------------
# exact policy enumeration (test and diagnostic aid; small registries only)


def _nonzero_mask_distribution(probs: np.ndarray) -> dict[tuple[int, ...], float]:
    """Joint law of a Bernoulli mask conditioned on not being all-zero, which
    is what redraw-until-nonzero sampling converges to."""
    n = len(probs)
    if n > 16:
        raise ValueError("mask enumeration is limited to 16 choices")
    out = {}
    total = 0.0
    for bits in range(1, 2**n):
        mask = tuple((bits >> i) & 1 for i in range(n))
        p = float(np.prod([probs[i, m] for i, m in enumerate(mask)]))
        out[mask] = p
        total += p
    return {m: p / total for m, p in out.items()}


def enumerate_policy(params: ControllerParams, clamp: Clamp | None = None) -> dict:
    """Exact marginals of the sampling policy, resampling correction included.

    Enumerates every non-zero step-1 mask (so the unsupervised registry must
    stay small), then every k, then the step-3 marginals conditioned on each
    prefix. Returns marginal select probabilities per step.
    """
    clamp = clamp or Clamp()
    p_unsup = np.zeros(params.n_unsup)
    p_k = np.zeros(params.n_k)
    p_sup = np.zeros(params.n_sup)

    def probs_for(mask, k_index):
        state = _traverse(
            params,
            lambda probs: np.asarray(mask),
            lambda probs: k_index if k_index is not None else 0,
            lambda probs: np.zeros(params.n_sup, dtype=np.int64) + 1,
        )
        return state["probs"]

    if clamp.unsup_mask is not None:
        mask_dist = {tuple(clamp.unsup_mask): 1.0}
    else:
        probs1 = probs_for(tuple([1] * params.n_unsup), 0)[0]
        mask_dist = _nonzero_mask_distribution(probs1)

    for mask, pm in mask_dist.items():
        p_unsup += pm * np.asarray(mask)
        probs2 = probs_for(mask, 0)[1]
        if clamp.k_index is not None:
            k_dist = {clamp.k_index: 1.0}
        else:
            k_dist = {t: float(probs2[t]) for t in range(params.n_k)}
        for t, pk in k_dist.items():
            p_k[t] += pm * pk
            probs3 = probs_for(mask, t)[2]
            if clamp.sup_mask is not None:
                sup_marg = np.asarray(clamp.sup_mask, dtype=np.float64)
            else:
                sup_dist = _nonzero_mask_distribution(probs3)
                sup_marg = np.zeros(params.n_sup)
                for smask, sp in sup_dist.items():
                    sup_marg += sp * np.asarray(smask)
            p_sup += pm * pk * sup_marg
    return {"unsup": p_unsup, "k": p_k, "sup": p_sup}


def sup_mask_distribution(params: ControllerParams, unsup_mask, k_index: int) -> dict:
    """Exact step-3 mask law for a fixed prefix (resampling correction included)."""
    state = _traverse(
        params,
        lambda probs: np.asarray(unsup_mask),
        lambda probs: k_index,
        lambda probs: np.ones(params.n_sup, dtype=np.int64),
    )
    return _nonzero_mask_distribution(state["probs"][2])
