"""Greedy, beam and sampled generation.

All decoders share one generation policy: at each of the first
``max_len`` steps the next token is drawn from the model's distribution
renormalized over emittable tokens (everything but ``<pad>`` and
``<sos>``); if no ``<eos>`` has appeared after ``max_len`` words, an
``<eos>`` is appended with probability one, contributing 0 to the
sequence log-probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .captioner import ToyCaptionModel, next_token_logprobs
from .textproc import EOS_ID, SOS_ID

DEFAULT_MAX_LEN = 22
MAX_BEAM = 5


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float = 0.0

    @property
    def finished(self) -> bool:
        return len(self.tokens) > 1 and self.tokens[-1] == EOS_ID

    def extend(self, token: int, logprob: float) -> "Hypothesis":
        return Hypothesis(self.tokens + (token,), self.logprob + logprob)


def _check_max_len(max_len: int) -> None:
    if max_len < 1:
        raise DecodeError(f"max_len must be >= 1, got {max_len}")


def greedy_decode(model: ToyCaptionModel, context, max_len: int = DEFAULT_MAX_LEN) -> Hypothesis:
    """Argmax at every step, ties going to the lowest token id."""
    _check_max_len(max_len)
    hyp = Hypothesis((SOS_ID,))
    for _ in range(max_len):
        lp = next_token_logprobs(model, context, hyp.tokens[-1], restrict=True)
        tok = int(np.argmax(lp))
        hyp = hyp.extend(tok, float(lp[tok]))
        if tok == EOS_ID:
            return hyp
    return hyp.extend(EOS_ID, 0.0)


def beam_decode(
    model: ToyCaptionModel,
    context,
    beam: int = MAX_BEAM,
    max_len: int = DEFAULT_MAX_LEN,
    max_beam: int | None = MAX_BEAM,
) -> Hypothesis:
    """Beam search on summed log-probability, no length normalization.

    Hypotheses that emit ``<eos>`` leave the beam for a completed pool;
    hypotheses still open after ``max_len`` words are closed with a forced
    ``<eos>`` and join the pool.  The best pooled hypothesis is returned.
    Pass ``max_beam=None`` to lift the cap on the beam width.
    """
    _check_max_len(max_len)
    if beam < 1 or (max_beam is not None and beam > max_beam):
        raise DecodeError(f"beam must be in 1..{max_beam}, got {beam}")
    alive = [Hypothesis((SOS_ID,))]
    done: list[Hypothesis] = []
    for _ in range(max_len):
        candidates = []
        for rank, hyp in enumerate(alive):
            lp = next_token_logprobs(model, context, hyp.tokens[-1], restrict=True)
            for tok in np.flatnonzero(np.isfinite(lp)):
                candidates.append((-(hyp.logprob + lp[tok]), rank, int(tok), float(lp[tok])))
        candidates.sort()
        parents, alive = alive, []
        for _, rank, tok, lp in candidates[:beam]:
            hyp = parents[rank].extend(tok, lp)
            (done if tok == EOS_ID else alive).append(hyp)
        if not alive:
            break
        # open hypotheses can only lose probability from here on
        if done and max(h.logprob for h in done) > max(h.logprob for h in alive):
            alive = []
            break
    done.extend(h.extend(EOS_ID, 0.0) for h in alive)
    return min(done, key=lambda h: (-h.logprob, h.tokens))


def sample_decode(model: ToyCaptionModel, context, max_len: int = DEFAULT_MAX_LEN, rng_seed=None):
    """Multinomial sampling at temperature 1.

    Returns ``(tokens, step_logprobs)`` with one log-probability per token
    after ``<sos>``; a forced final ``<eos>`` gets 0.0.
    """
    _check_max_len(max_len)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    tokens, logprobs = [SOS_ID], []
    for _ in range(max_len):
        lp = next_token_logprobs(model, context, tokens[-1], restrict=True)
        p = np.exp(lp)
        tok = int(rng.choice(len(p), p=p / p.sum()))
        tokens.append(tok)
        logprobs.append(float(lp[tok]))
        if tok == EOS_ID:
            return tokens, logprobs
    tokens.append(EOS_ID)
    logprobs.append(0.0)
    return tokens, logprobs
