"""
Teaching a toy captioner five sounds
====================================

Five fake clips, each with three captions. Their features are noise plus a
spike in one mel band, so the model has exactly one cue to pick up.
"""

import numpy as np

from audiocap.captioner import TrainConfig, TrainingClip, encode_context, init_model, train_ce
from audiocap.decode import beam_decode, greedy_decode, sample_decode
from audiocap.textproc import build_vocabulary, decode_to_words, encode, normalize_and_tokenize

captions = [
    ["a dog barks loudly", "a dog is barking", "dog barks in the distance"],
    ["rain falls on a roof", "heavy rain on the roof", "rain is falling"],
    ["a car drives by", "a car passes by quickly", "cars drive by"],
    ["birds chirp in the trees", "birds are singing", "a bird chirps"],
    ["people talk in a crowd", "a crowd is talking", "people are talking"],
]
tokens = [[normalize_and_tokenize(c) for c in caps] for caps in captions]
vocab = build_vocabulary(c for caps in tokens for c in caps)
print(len(vocab), "tokens including the four reserved ones")

rng = np.random.default_rng(0)
clips = [
    TrainingClip(rng.normal(size=(20, 8)) + 3.0 * np.eye(8)[i], [encode(c, vocab) for c in caps])
    for i, caps in enumerate(tokens)
]

###############################################################################
# Cross-entropy with label smoothing, Adam, warm-up then step decay.

model = init_model(len(vocab), feature_dim=8, context_dim=8, embed_dim=8, rng=0)
cfg = TrainConfig(lr0=3e-2, batch=5, warmup_epochs=1, decay_every=1000)
model, losses = train_ce(model, clips, cfg, epochs=100)
print("loss: first epoch %.3f, last epoch %.3f" % (losses[0], losses[-1]))

###############################################################################
# The decoder sees only the mean-pooled clip, so it learns one caption per
# cue. Beam search looks further ahead than greedy decoding.

for clip, refs in zip(clips, captions):
    ctx = encode_context(model, clip.features)
    g = greedy_decode(model, ctx, 12)
    b = beam_decode(model, ctx, beam=3, max_len=12)
    s, _ = sample_decode(model, ctx, 12, rng_seed=1)
    print(f"{refs[0]!r}")
    print(f"   greedy {' '.join(decode_to_words(g.tokens, vocab))!r}  ({g.logprob:.2f})")
    print(f"   beam   {' '.join(decode_to_words(b.tokens, vocab))!r}  ({b.logprob:.2f})")
    print(f"   sample {' '.join(decode_to_words(s, vocab))!r}")
