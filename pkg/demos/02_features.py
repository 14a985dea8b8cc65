"""
Log-mel features and SpecAugment
================================

A two-tone test signal goes through the 64-band log-mel front end, then
through random frequency and time masking.
"""

import numpy as np

from audiocap.audiofeat import MelConfig, filter_centres, log_mel, spec_augment

sr = 44100
t = np.arange(2 * sr) / sr
audio = 0.5 * np.sin(2 * np.pi * 440 * t)
audio[sr:] += 0.5 * np.sin(2 * np.pi * 3000 * t[sr:])  # second tone joins after one second

mel = log_mel(audio, sr)
print("frames x bins:", mel.shape)
print("hop in seconds:", MelConfig().hop / sr)

###############################################################################
# The loudest band in each half should sit near the tone frequencies.

centres = filter_centres(sr)
first, second = mel.values[: mel.shape[0] // 2], mel.values[-10:]
print("first half peak  ~", round(centres[first.mean(axis=0).argmax()]), "Hz")
top2 = np.argsort(second.mean(axis=0))[-2:]
print("second half peaks ~", sorted(round(centres[k]) for k in top2), "Hz")

###############################################################################
# Masking replaces whole bands and whole frame ranges with the mean value.
# Same seed, same masks.

aug = spec_augment(mel, rng_seed=4)
changed = aug.values != mel.values
print("masked bins:", np.flatnonzero(changed.all(axis=0)))
print("masked frames:", np.flatnonzero(changed.all(axis=1)))
assert np.array_equal(aug.values, spec_augment(mel, rng_seed=4).values)
