"""
Self-critical fine-tuning on CIDEr-D
====================================

Starting from a briefly trained model, sample a caption per clip, score it
against the greedy caption, and push probability toward samples that beat
the greedy one.
"""

import numpy as np

from audiocap.captioner import TrainConfig, TrainingClip, encode_context, init_model, train_ce
from audiocap.corpus import phrase_count
from audiocap.decode import greedy_decode
from audiocap.scst import RLConfig, greedy_rewards, reward_stats, train_scst
from audiocap.textproc import build_vocabulary, decode_to_words, encode, normalize_and_tokenize

captions = [
    ["a dog barks loudly", "a dog is barking", "dog barks in the background"],
    ["rain falls on a roof", "heavy rain on the roof", "rain is falling"],
    ["a car drives by", "a car passes by quickly", "cars drive by in the background"],
    ["birds chirp in the trees", "birds are singing", "a bird chirps"],
    ["people talk in a crowd", "a crowd is talking", "people are talking"],
]
tokens = [[normalize_and_tokenize(c) for c in caps] for caps in captions]
vocab = build_vocabulary(c for caps in tokens for c in caps)
rng = np.random.default_rng(0)
clips = [
    TrainingClip(rng.normal(size=(20, 8)) + 3.0 * np.eye(8)[i], [encode(c, vocab) for c in caps])
    for i, caps in enumerate(tokens)
]

model = init_model(len(vocab), 8, 8, 8, rng=0)
model, _ = train_ce(model, clips, TrainConfig(lr0=3e-2, batch=5, warmup_epochs=1, decay_every=1000), 100)

###############################################################################
# Document frequencies come from the training references and stay fixed
# for the whole run.

stats = reward_stats(clips)
print("greedy CIDEr-D before:", np.round(greedy_rewards(model, clips, stats, 12), 3))

tuned, log = train_scst(model, clips, RLConfig(lr=1e-3, batch=5, max_len=12), 100, stats)
print("greedy CIDEr-D after: ", np.round(greedy_rewards(tuned, clips, stats, 12), 3))
for rec in log[::20]:
    print(rec)

###############################################################################
# Reward hacking is easy to spot with a phrase count over the outputs.


def captions_of(m):
    return [decode_to_words(greedy_decode(m, encode_context(m, c.features), 12).tokens, vocab) for c in clips]

for name, m in (("before", model), ("after", tuned)):
    out = captions_of(m)
    print(name, phrase_count(out, ["in", "the", "background"]), "x 'in the background':", [" ".join(c) for c in out])
