"""Acceptance gate.

Each test exercises one criterion at its pinned tolerance and time budget and
adds a PASS/FAIL line to the summary printed at the end of the pytest run.
Dataset-dependent checks run only when the real corpora are pointed to by
``AUDIOCAP_CLOTHO_DIR`` / ``AUDIOCAP_AUDIOCAPS_DIR``.
"""

import contextlib
import os
import random
import time
from pathlib import Path

import numpy as np
import pytest

from audiocap import cli
from audiocap.audiofeat import MelSpectrogram, dft, spec_augment
from audiocap.captioner import TRAINABLE, ce_loss_label_smoothed
from audiocap.corpus import clip_phrase_count, load_audiocaps_csv, load_clotho_csv, merge_splits
from audiocap.decode import beam_decode, greedy_decode
from audiocap.metrics import (
    EvalInstance,
    IdfStats,
    bleu_stats,
    cider_d_sentence,
    cider_scores,
    lcs_length,
    spider_combine,
)
from audiocap.scst import RLConfig, greedy_rewards, policy_gradient, reward_stats, scst_gradient, sequence_logprob, train_scst
from audiocap.textproc import build_vocabulary, merge_vocabularies

import conftest
from conftest import cli_workspace, numeric_grads, random_model, rel_err, synthetic_dataset
from test_audiofeat import direct_dft
from test_captioner import random_target
from test_decode import enumerate_sequences, random_case
from test_metrics import brute_lcs
from test_scst import _pretrained, enumerable_case, expected_reward, mean_scst_gradient


@contextlib.contextmanager
def criterion(name, budget_s=None):
    """Time the body, log one summary line, then enforce the time budget."""
    info = {}
    start = time.perf_counter()
    try:
        yield info
    except BaseException as e:
        conftest.ACCEPTANCE_LINES.append(f"[FAIL] {name}: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}")
        raise
    elapsed = time.perf_counter() - start
    over = budget_s is not None and elapsed >= budget_s
    detail = info.get("detail", "")
    limit = f" < {budget_s:g}s" if budget_s is not None else ""
    conftest.ACCEPTANCE_LINES.append(
        f"[{'FAIL' if over else 'PASS'}] {name}: {detail}{'; ' if detail else ''}{elapsed:.3f}s{limit}"
    )
    assert not over, f"{name} took {elapsed:.3f}s (budget {budget_s}s)"


def test_spider_arithmetic():
    cases = [((0.476, 0.134), 0.305), ((0.421, 0.120), 0.2705), ((0.352, 0.100), 0.226)]
    with criterion("SPIDEr arithmetic", 1e-3) as info:
        got = [spider_combine(*args) for args, _ in cases]
        worst = max(abs(g - e) for g, (_, e) in zip(got, cases))
        info["detail"] = f"max error {worst:.1e} (tol 1e-12)"
        assert worst < 1e-12


def test_metric_oracle_suite():
    with criterion("metric oracle suite", 10.0) as info:
        # clipped count: one "the" allowed out of four
        s = bleu_stats([EvalInstance("the the the the".split(), ["the cat".split()])], 1)
        assert abs(s.precisions[0] - 0.25) < 1e-9

        rng = random.Random(0)
        for _ in range(500):
            a = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
            b = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
            assert lcs_length(a, b) == brute_lcs(a, b)

        corpus = [EvalInstance(["x", "y", "z"], [["a", "b", "c"]]),
                  EvalInstance(["d", "e"], [["d", "e"]]),
                  EvalInstance(["f"], [["f", "g"]])]
        assert abs(cider_scores(corpus)[0]) < 1e-9

        vocab = "abcd"
        for trial in range(5):
            refs = [[rng.choice(vocab) for _ in range(rng.randint(2, 4))] for _ in range(3)]
            stats = IdfStats([[r] for r in refs])
            for r in refs:
                own = cider_d_sentence(r, [r], stats)
                for length in range(1, 5):
                    for cand in np.ndindex(*(len(vocab),) * length):
                        assert cider_d_sentence([vocab[i] for i in cand], [r], stats) <= own + 1e-9
        info["detail"] = "BLEU p1=1/4, 500 LCS pairs, CIDEr zero-overlap and self-maximality"


def test_gradient_checks():
    worst = 0.0
    with criterion("gradient checks (CE + SCST, 20 models each)", 30.0) as info:
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            m = random_model(seed, vocab_size=int(rng.integers(5, 9)))
            x = rng.normal(size=(4, 5))
            target = random_target(rng, m.vocab_size)
            eps = float(rng.choice([0.0, 0.1, 0.3]))
            _, g = ce_loss_label_smoothed(m, x, target, eps)
            num = numeric_grads(lambda mm: ce_loss_label_smoothed(mm, x, target, eps)[0], m)
            worst = max(worst, *(rel_err(g[k], num[k]) for k in TRAINABLE))

            _, _, sample = scst_gradient(m, x, [[4, 5]], seed, reward_fn=lambda c: float(len(c)))
            adv = sample.advantage or 0.7
            _, g = policy_gradient(m, x, sample.sampled, adv, 22)
            num = numeric_grads(lambda mm: -adv * sequence_logprob(mm, x, sample.sampled, 22), m)
            worst = max(worst, *(rel_err(g[k], num[k]) for k in TRAINABLE))
        info["detail"] = f"max relative error {worst:.1e} (tol 1e-5)"
        assert worst < 1e-5


def test_policy_gradient_exactness():
    worst = 0.0
    with criterion("policy-gradient exactness (10 reward assignments)", 10.0) as info:
        for seed in range(10):
            model, pooled, rewards = enumerable_case(seed)
            greedy = greedy_decode(model, model.context_proj @ pooled, 2).tokens
            mean = mean_scst_gradient(model, pooled, rewards, 2, rewards[greedy])
            num = numeric_grads(lambda mm: -expected_reward(mm, pooled, rewards, 2), model)
            worst = max(worst, *(float(np.max(np.abs(mean[k] - num[k]))) for k in TRAINABLE))
        info["detail"] = f"max coordinate error {worst:.1e} (tol 1e-8)"
        assert worst < 1e-8


def test_decoding():
    with criterion("decoding (beam=1 vs greedy, exhaustive beam)", 10.0) as info:
        for seed in range(100):
            m, ctx = random_case(seed)
            assert beam_decode(m, ctx, 1, 8).tokens == greedy_decode(m, ctx, 8).tokens
        checked = 0
        for V in (4, 5, 6):  # 2, 3, 4 emittable tokens
            for max_len in range(1, 5):
                m, ctx = random_case(10 * V + max_len, V=V)
                best_tokens, best_lp = max(enumerate_sequences(m, ctx, max_len),
                                           key=lambda s: (s[1], [-t for t in s[0]]))
                hyp = beam_decode(m, ctx, (V - 2) ** max_len, max_len, max_beam=None)
                assert hyp.tokens == best_tokens and abs(hyp.logprob - best_lp) < 1e-12
                checked += 1
        info["detail"] = f"100 greedy models, {checked} exhaustive systems"


def test_rl_improvement():
    with criterion("end-to-end RL improvement", 60.0) as info:
        vocab, clips = synthetic_dataset()
        m = _pretrained(clips, vocab)
        stats = reward_stats(clips)
        before = float(np.mean(greedy_rewards(m, clips, stats, 12)))
        tuned, _ = train_scst(m, clips, RLConfig(lr=1e-3, batch=5, max_len=12), 100, stats)
        after = float(np.mean(greedy_rewards(tuned, clips, stats, 12)))
        info["detail"] = f"mean greedy CIDEr-D {before:.4f} -> {after:.4f}"
        assert after >= before


def test_dsp():
    with criterion("DSP (DFT oracle, SpecAugment invariants)", 5.0) as info:
        worst = 0.0
        for n in range(1, 257):
            x = np.random.default_rng(n).uniform(-1, 1, n)
            worst = max(worst, float(np.max(np.abs(dft(x) - direct_dft(x)))))
        assert worst < 1e-9

        mel = MelSpectrogram(np.random.default_rng(5).normal(size=(50, 64)), 44100, 512)
        assert spec_augment(mel, 0, f_masks=0, t_masks=0).values.tobytes() == mel.values.tobytes()
        fill = mel.values.mean()
        for seed in range(50):
            out = spec_augment(mel, seed, F=10, T_max=8).values
            assert out.shape == mel.shape
            changed = out != mel.values
            assert np.all(out[changed] == fill)
            rows, cols = changed.all(axis=1), changed.all(axis=0)
            assert np.array_equal(changed, rows[:, None] | cols[None, :])
        info["detail"] = f"DFT max error {worst:.1e} over N=1..256 (tol 1e-9)"


def test_determinism(tmp_path, capsys):
    with criterion("determinism of train and rl-finetune checkpoints") as info:
        captions, feats = cli_workspace(tmp_path)
        for name in ("a", "b"):
            run = tmp_path / name
            common = ["--captions", captions, "--features", feats, "--run-dir", run, "--seed", 7, "--batch", 2]
            assert cli.main([str(a) for a in ["train", *common, "--epochs", 4, "--spec-augment", "on"]]) == 0
            assert cli.main([str(a) for a in ["rl-finetune", *common, "--epochs", 2, "--max-len", 8,
                                              "--checkpoint", run / "checkpoints/model.ckpt",
                                              "--vocab", run / "vocab.txt"]]) == 0
        capsys.readouterr()
        for ckpt in ("model.ckpt", "model_rl.ckpt"):
            a = (tmp_path / "a/checkpoints" / ckpt).read_bytes()
            b = (tmp_path / "b/checkpoints" / ckpt).read_bytes()
            assert a == b
        info["detail"] = "byte-identical model.ckpt and model_rl.ckpt"


# --------------------------------------------------------------------------
# dataset-dependent soft checks
# --------------------------------------------------------------------------

CLOTHO = os.environ.get("AUDIOCAP_CLOTHO_DIR")
AUDIOCAPS = os.environ.get("AUDIOCAP_AUDIOCAPS_DIR")


def needs_data(*vars_):
    def deco(fn):
        def wrapper():
            missing = [v for v in vars_ if not os.environ.get(v)]
            if missing:
                conftest.ACCEPTANCE_LINES.append(f"[SKIP] soft: {fn.__name__[10:]} (set {', '.join(missing)})")
                pytest.skip(f"set {', '.join(missing)}")
            fn()

        wrapper.__name__ = fn.__name__
        return wrapper

    return deco


needs_clotho = needs_data("AUDIOCAP_CLOTHO_DIR")
needs_both = needs_data("AUDIOCAP_CLOTHO_DIR", "AUDIOCAP_AUDIOCAPS_DIR")


def clotho_split(name):
    return load_clotho_csv(Path(CLOTHO) / f"clotho_captions_{name}.csv", name)


def clotho_vocab():
    splits = [clotho_split(s) for s in ("development", "validation", "evaluation")]
    return build_vocabulary(c for s in splits for r in s for c in r.tokenized())


def soft_count(name, observed, target, rel_tol):
    ok = abs(observed - target) <= rel_tol * target
    conftest.ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] soft: {name} = {observed} (target {target}, tol {rel_tol:.0%})")
    assert ok


@needs_clotho
def test_soft_clotho_clip_counts():
    dev = clotho_split("development")
    soft_count("Clotho development clips", len(dev), 3839, 0.0)
    soft_count("merged development + validation clips", len(merge_splits(dev, clotho_split("validation"))), 4884, 0.0)


@needs_clotho
def test_soft_ground_truth_background_clips():
    clips = [r.tokenized() for r in clotho_split("evaluation")]
    soft_count('evaluation clips with "in the background"', clip_phrase_count(clips, ["in", "the", "background"]), 302, 0.0)


# the normalizer's treatment of hyphens and apostrophes is a choice, so
# vocabulary sizes are allowed a small relative drift
@needs_clotho
def test_soft_clotho_vocabulary_size():
    soft_count("Clotho vocabulary", len(clotho_vocab().content_words), 4367, 0.05)


@needs_both
def test_soft_merged_vocabulary_size():
    ac = load_audiocaps_csv(Path(AUDIOCAPS) / "train.csv")
    ac_vocab = build_vocabulary(c for r in ac for c in r.tokenized())
    soft_count("merged Clotho + AudioCaps vocabulary",
               len(merge_vocabularies(clotho_vocab(), ac_vocab).content_words), 6636, 0.05)
