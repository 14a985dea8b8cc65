"""Self-critical sequence training.

A sampled caption is rewarded with its CIDEr-D score, the model's own
greedy caption supplies the baseline, and the gradient of

    -(r(sample) - r(greedy)) * log p(sample)

is followed with Adam at a constant learning rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .captioner import (
    AdamState,
    ModelError,
    ToyCaptionModel,
    TrainingClip,
    adam_step,
    average_grads,
    backprop_logit_grads,
    batches,
    encode_context,
    log_softmax,
    output_logits,
    policy_mask,
    pool_features,
)
from .decode import DEFAULT_MAX_LEN, greedy_decode, sample_decode
from .metrics import IdfStats, cider_d_sentence
from .textproc import strip_special

RewardFn = Callable[[Sequence[int]], float]


@dataclass(frozen=True)
class RewardSample:
    sampled: tuple
    sample_logprobs: tuple
    baseline: tuple
    r_sample: float
    r_baseline: float

    @property
    def advantage(self) -> float:
        return self.r_sample - self.r_baseline


@dataclass(frozen=True)
class RLConfig:
    lr: float = 5e-5
    batch: int = 32
    max_len: int = DEFAULT_MAX_LEN
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ModelError("lr must be positive")
        if self.batch < 1 or self.max_len < 1:
            raise ModelError("batch and max_len must be >= 1")


def reward_stats(dataset: Sequence[TrainingClip]) -> IdfStats:
    """IDF statistics over the training references, frozen for the whole RL run."""
    return IdfStats([clip_references(c) for c in dataset])


def clip_references(clip: TrainingClip) -> list[list[int]]:
    return [strip_special(c) for c in clip.captions]


def caption_reward(candidate: Sequence, references: Sequence[Sequence], idf_stats: IdfStats) -> float:
    """CIDEr-D of one caption (special tokens already stripped); empty captions earn 0."""
    if len(candidate) == 0:
        return 0.0
    return cider_d_sentence(candidate, references, idf_stats)


def _sampled_steps(tokens: Sequence[int], max_len: int) -> int:
    # a caption holding max_len words ended on a forced <eos>, which carries no probability
    words = len(tokens) - 2
    return max_len if words == max_len else len(tokens) - 1


def sequence_logprob(model: ToyCaptionModel, features, tokens: Sequence[int], max_len: int = DEFAULT_MAX_LEN) -> float:
    """Log-probability of a framed caption under the generation policy."""
    ids = np.asarray(tokens)
    steps = _sampled_steps(tokens, max_len)
    z = output_logits(model, encode_context(model, features), ids[:steps])
    logp = log_softmax(np.where(policy_mask(model.vocab_size), z, -np.inf))
    return float(np.sum(logp[np.arange(steps), ids[1 : steps + 1]]))


def policy_gradient(model: ToyCaptionModel, features, tokens: Sequence[int], advantage: float, max_len: int = DEFAULT_MAX_LEN):
    """Surrogate loss ``-advantage * log p(tokens)`` and its parameter gradients."""
    pooled = pool_features(features)
    if advantage == 0.0:
        zeros = {k: np.zeros_like(v) for k, v in model.params().items()}
        return 0.0, zeros
    ids = np.asarray(tokens)
    steps = _sampled_steps(tokens, max_len)
    prev, nxt = ids[:steps], ids[1 : steps + 1]
    z = output_logits(model, encode_context(model, pooled), prev)
    logp = log_softmax(np.where(policy_mask(model.vocab_size), z, -np.inf))
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(steps), nxt] = 1.0
    loss = -advantage * float(np.sum(logp[np.arange(steps), nxt]))
    grads = backprop_logit_grads(model, pooled, prev, advantage * (probs - onehot))
    return loss, grads


def scst_gradient(
    model: ToyCaptionModel,
    features,
    references: Sequence[Sequence],
    rng_seed=None,
    idf_stats: Optional[IdfStats] = None,
    max_len: int = DEFAULT_MAX_LEN,
    reward_fn: Optional[RewardFn] = None,
):
    """One-sample self-critical gradient for a single clip.

    ``references`` are token lists without ``<sos>``/``<eos>``.  The reward
    defaults to CIDEr-D under ``idf_stats``; ``reward_fn`` overrides it and
    receives the caption with special tokens stripped.

    Returns ``(loss, grads, RewardSample)``.
    """
    if not references:
        raise ModelError("SCST needs at least one reference caption")
    if reward_fn is None:
        stats = idf_stats if idf_stats is not None else IdfStats([references])
        reward_fn = lambda cand: caption_reward(cand, references, stats)  # noqa: E731
    context = encode_context(model, features)
    sampled, sample_lps = sample_decode(model, context, max_len, rng_seed)
    baseline = greedy_decode(model, context, max_len).tokens
    r_sample = float(reward_fn(strip_special(sampled)))
    r_base = float(reward_fn(strip_special(baseline)))
    sample = RewardSample(tuple(sampled), tuple(sample_lps), tuple(baseline), r_sample, r_base)
    loss, grads = policy_gradient(model, features, sampled, sample.advantage, max_len)
    return loss, grads, sample


def greedy_rewards(model: ToyCaptionModel, dataset: Sequence[TrainingClip], idf_stats: IdfStats, max_len: int = DEFAULT_MAX_LEN) -> list[float]:
    out = []
    for clip in dataset:
        hyp = greedy_decode(model, encode_context(model, clip.features), max_len)
        out.append(caption_reward(strip_special(hyp.tokens), clip_references(clip), idf_stats))
    return out


def train_scst(
    model: ToyCaptionModel,
    dataset: Sequence[TrainingClip],
    cfg: RLConfig,
    epochs: int,
    idf_stats: Optional[IdfStats] = None,
):
    """Adam on self-critical gradients at a constant learning rate.

    Returns a trained copy of ``model`` and one log record per epoch with
    the mean greedy (baseline) reward and mean advantage seen that epoch.
    """
    if not dataset:
        raise ModelError("empty training set")
    stats = idf_stats if idf_stats is not None else reward_stats(dataset)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    model = model.copy()
    log = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(dataset))
        rewards, advantages = [], []
        for sl in batches(len(order), cfg.batch):
            grads = []
            for i in order[sl]:
                clip = dataset[i]
                _, g, sample = scst_gradient(
                    model, clip.features, clip_references(clip), rng, stats, cfg.max_len
                )
                grads.append(g)
                rewards.append(sample.r_baseline)
                advantages.append(sample.advantage)
            params, state = adam_step(model.params(), average_grads(grads), state, cfg.lr)
            model = model.with_params(params)
        log.append(
            {"epoch": epoch, "mean_reward": float(np.mean(rewards)), "mean_advantage": float(np.mean(advantages))}
        )
    return model, log


def write_reward_log(path, log: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in log:
            fh.write(json.dumps(rec) + "\n")
