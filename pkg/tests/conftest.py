import numpy as np
import pytest

from audiocap.captioner import TRAINABLE, TrainingClip, init_model
from audiocap.textproc import build_vocabulary, encode, normalize_and_tokenize

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_model(seed, vocab_size=7, feature_dim=5, context_dim=3, embed_dim=4, scale=1.0):
    """Tiny model with all parameters drawn at ``scale`` so distributions are far from uniform."""
    rng = np.random.default_rng(seed)
    model = init_model(vocab_size, feature_dim, context_dim, embed_dim, rng=seed)
    return model.with_params({k: rng.normal(0.0, scale, v.shape) for k, v in model.params().items()})


def numeric_grads(loss_fn, model, h=1e-5):
    out = {}
    for name in TRAINABLE:
        base = getattr(model, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            for sign in (1, -1):
                p = base.copy()
                p[idx] += sign * h
                g[idx] += sign * loss_fn(model.with_params({name: p})) / (2 * h)
        out[name] = g
    return out


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


SYNTHETIC_CAPTIONS = [
    ["a dog barks loudly", "a dog is barking", "dog barks in the distance"],
    ["rain falls on a roof", "heavy rain on the roof", "rain is falling"],
    ["a car drives by", "a car passes by quickly", "cars drive by"],
    ["birds chirp in the trees", "birds are singing", "a bird chirps"],
    ["people talk in a crowd", "a crowd is talking", "people are talking"],
]


def synthetic_dataset(seed=0, frames=20, bins=8):
    """Five clips whose features carry a clip-specific offset in one bin."""
    rng = np.random.default_rng(seed)
    tokens = [[normalize_and_tokenize(c) for c in caps] for caps in SYNTHETIC_CAPTIONS]
    vocab = build_vocabulary(c for caps in tokens for c in caps)
    clips = [
        TrainingClip(rng.normal(size=(frames, bins)) + 3.0 * np.eye(bins)[i], [encode(c, vocab) for c in caps])
        for i, caps in enumerate(tokens)
    ]
    return vocab, clips


@pytest.fixture
def synthetic():
    return synthetic_dataset()


def cli_workspace(root, seed=0):
    """Caption CSV plus one ``.mel`` file per clip of the synthetic set."""
    from audiocap.audiofeat import MelSpectrogram
    from audiocap.corpus import ClipRecord, DatasetSplit, write_clotho_csv

    rng = np.random.default_rng(seed)
    feats = root / "feats"
    feats.mkdir(parents=True, exist_ok=True)
    records = []
    for i, caps in enumerate(SYNTHETIC_CAPTIONS):
        name = f"clip{i}.wav"
        MelSpectrogram(rng.normal(size=(20, 8)) + 3.0 * np.eye(8)[i], 44100.0, 512).save(feats / f"{name}.mel")
        records.append(ClipRecord(name, tuple(caps)))
    write_clotho_csv(DatasetSplit("dev", tuple(records)), root / "dev.csv")
    return root / "dev.csv", feats
