"""A small conditional next-word model, its label-smoothed loss, Adam and the training loop.

The model maps a spectrogram to a context vector by mean pooling over
time followed by a linear projection, and predicts the next word from the
context and the embedding of the previous word through one affine layer:

    context = P @ mean_t(X)
    logits  = W @ [context ; E[prev]] + b

Word embeddings ``E`` are drawn once at initialization and never trained.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audiofeat import MelSpectrogram, spec_augment
from .textproc import EOS_ID, PAD_ID, SOS_ID, check_sequence

TRAINABLE = ("context_proj", "out_weights", "out_bias")
# tokens a decoder may never emit
NOT_GENERATED = (PAD_ID, SOS_ID)

_MAGIC = b"ACAP"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, V, d, D, D'


class ModelError(ValueError):
    pass


@dataclass
class ToyCaptionModel:
    context_proj: np.ndarray  # (D', D)
    embed: np.ndarray  # (V, d), frozen
    out_weights: np.ndarray  # (V, D' + d)
    out_bias: np.ndarray  # (V,)

    def __post_init__(self):
        ctx, feat = self.context_proj.shape
        vocab, emb = self.embed.shape
        if self.out_weights.shape != (vocab, ctx + emb) or self.out_bias.shape != (vocab,):
            raise ModelError(
                f"inconsistent shapes: proj {self.context_proj.shape}, embed {self.embed.shape}, "
                f"out {self.out_weights.shape}, bias {self.out_bias.shape}"
            )

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.context_proj.shape[1]

    @property
    def context_dim(self) -> int:
        return self.context_proj.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in TRAINABLE}

    def with_params(self, params: dict[str, np.ndarray]) -> "ToyCaptionModel":
        return replace(self, **params)

    def copy(self) -> "ToyCaptionModel":
        return ToyCaptionModel(
            self.context_proj.copy(), self.embed.copy(), self.out_weights.copy(), self.out_bias.copy()
        )

    def save(self, path) -> None:
        """Header with dimensions, then little-endian float64 blocks: proj, embed, weights, bias."""
        header = _HEADER.pack(
            _MAGIC, _VERSION, self.vocab_size, self.embed_dim, self.feature_dim, self.context_dim
        )
        blocks = [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in
                  (self.context_proj, self.embed, self.out_weights, self.out_bias)]
        Path(path).write_bytes(header + b"".join(blocks))

    @classmethod
    def load(cls, path) -> "ToyCaptionModel":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ModelError(f"{path}: truncated checkpoint")
        magic, version, V, d, D, C = _HEADER.unpack_from(raw)
        if magic != _MAGIC or version != _VERSION:
            raise ModelError(f"{path}: not a version-{_VERSION} checkpoint")
        shapes = [(C, D), (V, d), (V, C + d), (V,)]
        expected = _HEADER.size + 8 * sum(math.prod(s) for s in shapes)
        if len(raw) != expected:
            raise ModelError(f"{path}: size {len(raw)} does not match header (expected {expected})")
        arrays, offset = [], _HEADER.size
        for s in shapes:
            n = math.prod(s)
            arrays.append(np.frombuffer(raw, "<f8", n, offset).reshape(s).astype(np.float64))
            offset += 8 * n
        return cls(*arrays)


def init_model(vocab_size: int, feature_dim: int = 64, context_dim: int = 16, embed_dim: int = 16, rng=0) -> ToyCaptionModel:
    rng = np.random.default_rng(rng)
    return ToyCaptionModel(
        context_proj=rng.normal(0.0, 1.0 / math.sqrt(feature_dim), (context_dim, feature_dim)),
        embed=rng.normal(0.0, 1.0, (vocab_size, embed_dim)),
        out_weights=rng.normal(0.0, 0.01, (vocab_size, context_dim + embed_dim)),
        out_bias=np.zeros(vocab_size),
    )


# --------------------------------------------------------------------------
# forward pass
# --------------------------------------------------------------------------


def pool_features(features) -> np.ndarray:
    """Mean over time of a spectrogram; 1-D input is taken as already pooled.

    Column sums are exactly rounded, so the result does not depend on frame order.
    """
    if isinstance(features, MelSpectrogram):
        features = features.values
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 2:
        return np.array([math.fsum(col) for col in x.T]) / x.shape[0]
    if x.ndim == 1:
        return x
    raise ModelError(f"features must be 1-D or 2-D, got shape {x.shape}")


def encode_context(model: ToyCaptionModel, features) -> np.ndarray:
    x = pool_features(features)
    if x.shape != (model.feature_dim,):
        raise ModelError(f"expected {model.feature_dim} feature bins, got {x.shape[0]}")
    return model.context_proj @ x


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def output_logits(model: ToyCaptionModel, context: np.ndarray, prev) -> np.ndarray:
    context = np.asarray(context, dtype=np.float64)
    if context.shape != (model.context_dim,):
        raise ModelError(f"context must have length {model.context_dim}, got {context.shape}")
    prev = np.asarray(prev)
    if np.any(prev < 0) or np.any(prev >= model.vocab_size):
        raise ModelError(f"previous token outside vocabulary of size {model.vocab_size}")
    C = model.context_dim
    return model.out_weights[:, :C] @ context + model.embed[prev] @ model.out_weights[:, C:].T + model.out_bias


def policy_mask(vocab_size: int) -> np.ndarray:
    allowed = np.ones(vocab_size, dtype=bool)
    allowed[list(NOT_GENERATED)] = False
    return allowed


def next_token_logprobs(model: ToyCaptionModel, context, prev_token: int, restrict: bool = False) -> np.ndarray:
    """Log-distribution over the next token.

    With ``restrict`` the distribution is renormalized over tokens a
    decoder may emit (everything except ``<pad>`` and ``<sos>``); the
    excluded entries are ``-inf``.
    """
    z = output_logits(model, context, prev_token)
    if restrict:
        z = np.where(policy_mask(model.vocab_size), z, -np.inf)
    return log_softmax(z)


# --------------------------------------------------------------------------
# loss and gradients
# --------------------------------------------------------------------------


def backprop_logit_grads(model: ToyCaptionModel, pooled: np.ndarray, prev: np.ndarray, g: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given dLoss/dlogits ``g`` (steps x V) at inputs ``prev``."""
    C = model.context_dim
    context = model.context_proj @ pooled
    hidden = np.concatenate([np.broadcast_to(context, (len(prev), C)), model.embed[prev]], axis=1)
    d_context = (g @ model.out_weights[:, :C]).sum(axis=0)
    return {
        "context_proj": np.outer(d_context, pooled),
        "out_weights": g.T @ hidden,
        "out_bias": g.sum(axis=0),
    }


def smoothed_targets(targets: np.ndarray, vocab_size: int, eps: float) -> np.ndarray:
    q = np.full((len(targets), vocab_size), eps / vocab_size)
    q[np.arange(len(targets)), targets] += 1.0 - eps
    return q


def ce_loss_label_smoothed(model: ToyCaptionModel, features, target: Sequence[int], eps: float = 0.1):
    """Teacher-forced cross entropy against label-smoothed targets.

    Returns ``(loss, grads)`` where the loss is averaged over the predicted
    positions (every token after ``<sos>``, ``<eos>`` included) and
    ``grads`` holds one array per trainable parameter.
    """
    if not 0 <= eps < 1:
        raise ModelError(f"label smoothing eps must be in [0, 1), got {eps}")
    check_sequence(target, model.vocab_size)
    ids = np.asarray(target)
    prev, nxt = ids[:-1], ids[1:]
    pooled = pool_features(features)
    context = encode_context(model, pooled)
    logp = log_softmax(output_logits(model, context, prev))
    q = smoothed_targets(nxt, model.vocab_size, eps)
    T = len(nxt)
    loss = -float(np.sum(q * logp)) / T
    grads = backprop_logit_grads(model, pooled, prev, (np.exp(logp) - q) / T)
    return loss, grads


# --------------------------------------------------------------------------
# optimizer and schedule
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    for k, g in grads.items():
        if np.shape(g) != np.shape(params[k]):
            raise ModelError(f"gradient shape {np.shape(g)} does not match parameter {k!r}")
        if not np.all(np.isfinite(g)):
            raise ModelError(f"non-finite gradient for {k!r}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m, v = dict(params), {}, {}
    for k, g in grads.items():
        m[k] = b1 * state.m.get(k, 0.0) + (1 - b1) * g
        v[k] = b2 * state.v.get(k, 0.0) + (1 - b2) * g * g
        m_hat = m[k] / (1 - b1**t)
        v_hat = v[k] / (1 - b2**t)
        new_params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, t=t, m=m, v=v)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    warmup_epochs: int = 5
    decay_every: int = 10
    decay_factor: float = 0.1
    batch: int = 32
    label_eps: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    spec_augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ModelError("lr0 must be positive")
        if not 0 <= self.label_eps < 1:
            raise ModelError("label_eps must be in [0, 1)")
        if self.batch < 1 or self.warmup_epochs < 0 or self.decay_every < 1:
            raise ModelError("batch and decay_every must be >= 1, warmup_epochs >= 0")

    def adam(self) -> AdamState:
        return AdamState(self.beta1, self.beta2, self.adam_eps)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Linear warm-up to ``lr0`` over the first epochs, then a step decay.

    The first decay lands ``decay_every`` epochs after warm-up ends:
    with the defaults, epochs 6-15 use lr0, 16-25 lr0/10, 26-35 lr0/100.
    """
    if epoch < 1:
        raise ModelError(f"epochs are 1-based, got {epoch}")
    if epoch <= cfg.warmup_epochs:
        return cfg.lr0 * epoch / cfg.warmup_epochs
    return cfg.lr0 * cfg.decay_factor ** ((epoch - cfg.warmup_epochs - 1) // cfg.decay_every)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingClip:
    """A clip's features (spectrogram or pooled vector) and its encoded captions."""

    features: object
    captions: tuple

    def __init__(self, features, captions):
        if not captions:
            raise ModelError("a training clip needs at least one caption")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "captions", tuple(tuple(int(t) for t in c) for c in captions))


def _augment(features, cfg: TrainConfig, rng: np.random.Generator):
    if not cfg.spec_augment:
        return features
    mel = features if isinstance(features, MelSpectrogram) else None
    if mel is None:
        arr = np.asarray(features)
        if arr.ndim != 2:
            return features
        mel = MelSpectrogram(arr, 0.0, 0)
    # narrow feature sets (synthetic data) cannot fit the default 8-bin frequency mask
    return spec_augment(mel, rng, F=min(8, mel.values.shape[1] - 1)).values


def batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, start + size)


def average_grads(grad_list: list[dict]) -> dict:
    return {k: sum(g[k] for g in grad_list) / len(grad_list) for k in grad_list[0]}


def train_ce(model: ToyCaptionModel, dataset: Sequence[TrainingClip], cfg: TrainConfig, epochs: int):
    """Mini-batch Adam on the label-smoothed loss.

    Each epoch visits every clip once in a seeded random order, pairing it
    with one of its captions drawn at random.  Returns a trained copy of
    ``model`` and the mean training loss of each epoch.
    """
    if not dataset:
        raise ModelError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    state = cfg.adam()
    model = model.copy()
    losses = []
    for epoch in range(1, epochs + 1):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for sl in batches(len(order), cfg.batch):
            results = []
            for i in order[sl]:
                clip = dataset[i]
                caption = clip.captions[int(rng.integers(len(clip.captions)))]
                feats = _augment(clip.features, cfg, rng)
                results.append(ce_loss_label_smoothed(model, feats, caption, cfg.label_eps))
            epoch_losses.extend(loss for loss, _ in results)
            params, state = adam_step(model.params(), average_grads([g for _, g in results]), state, lr)
            model = model.with_params(params)
        losses.append(float(np.mean(epoch_losses)))
    return model, losses
