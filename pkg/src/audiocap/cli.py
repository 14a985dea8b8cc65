"""Command-line entry point.

    audiocap features     --audio-dir wavs/ --out-dir feats/
    audiocap train        --captions dev.csv --features feats/ --run-dir runs/ce
    audiocap rl-finetune  --captions dev.csv --features feats/ --checkpoint runs/ce/checkpoints/model.ckpt \
                          --vocab runs/ce/vocab.txt --run-dir runs/rl
    audiocap decode       --captions eval.csv --features feats/ --checkpoint ... --vocab ... --output pred.csv
    audiocap evaluate     --predictions pred.csv --references eval.csv [--spice spice.json]
    audiocap stats        --captions eval.csv --phrase "in the background" [--predictions pred.csv]

Numeric options may also come from ``--config FILE`` holding ``key = value``
lines named after the long flags; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import corpus, metrics
from .audiofeat import FeatureError, MelSpectrogram, log_mel, read_wav
from .captioner import ToyCaptionModel, TrainConfig, TrainingClip, encode_context, init_model, lr_at_epoch, train_ce
from .decode import DEFAULT_MAX_LEN, MAX_BEAM, beam_decode
from .scst import RLConfig, train_scst, write_reward_log
from .textproc import Vocabulary, build_vocabulary, decode_to_words, encode, normalize_and_tokenize


class CliError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "epochs": 30,
    "beam": MAX_BEAM,
    "lr": None,  # per-command default below
    "eps_label_smoothing": 0.1,
    "reward": "cider",
    "spec_augment": "off",
    "batch": 32,
    "max_len": DEFAULT_MAX_LEN,
    "embed_dim": 16,
    "context_dim": 16,
    "warmup_epochs": 5,
    "decay_every": 10,
}
_INT_KEYS = {"seed", "epochs", "beam", "batch", "max_len", "embed_dim", "context_dim", "warmup_epochs", "decay_every"}
_FLOAT_KEYS = {"lr", "eps_label_smoothing"}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    epochs: int
    beam: int
    lr: float
    eps_label_smoothing: float
    reward: str
    spec_augment: bool
    batch: int
    max_len: int
    embed_dim: int
    context_dim: int
    warmup_epochs: int
    decay_every: int


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS:
            raise CliError(f"{path}:{lineno}: unknown option {key!r}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace, default_lr: float) -> RunConfig:
    values = dict(DEFAULTS, lr=default_lr)
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        for key in _INT_KEYS:
            values[key] = int(values[key])
        for key in _FLOAT_KEYS:
            values[key] = float(values[key])
    except ValueError as e:
        raise CliError(f"bad numeric option: {e}") from e
    sa = str(values["spec_augment"]).lower()
    if sa not in ("on", "off"):
        raise CliError("--spec-augment must be on or off")
    values["spec_augment"] = sa == "on"
    if values["reward"] != "cider":
        raise CliError("only --reward cider is supported")
    if values["epochs"] < 0:
        raise CliError("--epochs must be >= 0")
    if not 1 <= values["beam"] <= MAX_BEAM:
        raise CliError(f"--beam must be in 1..{MAX_BEAM}")
    if not values["lr"] > 0:
        raise CliError("--lr must be positive")
    if not 0 <= values["eps_label_smoothing"] < 1:
        raise CliError("--eps-label-smoothing must be in [0, 1)")
    for key in ("batch", "max_len", "embed_dim", "context_dim", "decay_every"):
        if values[key] < 1:
            raise CliError(f"--{key.replace('_', '-')} must be >= 1")
    return RunConfig(**values)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def load_features(feature_dir, clip_id: str) -> MelSpectrogram:
    """``<dir>/<id>.mel`` if present, otherwise the WAV file ``<dir>/<id>``."""
    feature_dir = Path(feature_dir)
    for cand in (feature_dir / f"{clip_id}.mel", feature_dir / f"{Path(clip_id).stem}.mel"):
        if cand.exists():
            return MelSpectrogram.load(cand)
    wav = feature_dir / clip_id
    if wav.exists():
        audio, rate = read_wav(wav)
        return log_mel(audio, rate)
    raise FeatureError(f"no features for clip {clip_id!r} in {feature_dir}")


def training_clips(split: corpus.DatasetSplit, feature_dir, vocab: Vocabulary) -> list[TrainingClip]:
    return [
        TrainingClip(
            load_features(feature_dir, rec.id).values,
            [encode(normalize_and_tokenize(c), vocab) for c in rec.captions],
        )
        for rec in split
    ]


def _run_dirs(run_dir) -> tuple[Path, Path]:
    run = Path(run_dir)
    (run / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run / "logs").mkdir(parents=True, exist_ok=True)
    return run / "checkpoints", run / "logs"


def _load_references(path) -> dict[str, list[list[str]]]:
    path = Path(path)
    if path.suffix == ".csv":
        return {r.id: r.tokenized() for r in corpus.load_clotho_csv(path)}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[str(rec["id"])] = [normalize_and_tokenize(r) for r in rec["references"]]
    return out


def _load_predictions(path) -> dict[str, list[str]]:
    path = Path(path)
    if path.suffix == ".csv":
        return {k: normalize_and_tokenize(v) for k, v in corpus.load_predictions_csv(path).items()}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[str(rec["id"])] = normalize_and_tokenize(rec["candidate"])
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_features(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wavs = sorted(Path(args.audio_dir).glob("*.wav"))
    for wav in wavs:
        audio, rate = read_wav(wav)
        log_mel(audio, rate).save(out / f"{wav.name}.mel")
    print(f"wrote {len(wavs)} spectrograms to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args, default_lr=1e-3)
    split = corpus.load_clotho_csv(args.captions)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = build_vocabulary(c for rec in split for c in rec.tokenized())
    clips = training_clips(split, args.features, vocab)
    feat_dim = clips[0].features.shape[-1]
    if args.init_checkpoint:
        model = ToyCaptionModel.load(args.init_checkpoint)
        if model.vocab_size != len(vocab):
            raise CliError(f"checkpoint vocabulary size {model.vocab_size} != {len(vocab)}")
    else:
        model = init_model(len(vocab), feat_dim, cfg.context_dim, cfg.embed_dim, rng=cfg.seed)
    tcfg = TrainConfig(
        lr0=cfg.lr,
        warmup_epochs=cfg.warmup_epochs,
        decay_every=cfg.decay_every,
        batch=cfg.batch,
        label_eps=cfg.eps_label_smoothing,
        spec_augment=cfg.spec_augment,
        seed=cfg.seed,
    )
    model, losses = train_ce(model, clips, tcfg, cfg.epochs)
    ckpt_dir, log_dir = _run_dirs(args.run_dir)
    model.save(ckpt_dir / "model.ckpt")
    vocab.save(Path(args.run_dir) / "vocab.txt")
    with open(log_dir / "train.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for epoch, loss in enumerate(losses, 1):
            fh.write(json.dumps({"epoch": epoch, "lr": lr_at_epoch(tcfg, epoch), "loss": loss}) + "\n")
    print(f"trained {cfg.epochs} epochs on {len(clips)} clips; checkpoint in {ckpt_dir}")
    return 0


def cmd_rl_finetune(args) -> int:
    cfg = resolve_config(args, default_lr=5e-5)
    vocab = Vocabulary.load(args.vocab)
    model = ToyCaptionModel.load(args.checkpoint)
    if model.vocab_size != len(vocab):
        raise CliError(f"checkpoint vocabulary size {model.vocab_size} != {len(vocab)}")
    clips = training_clips(corpus.load_clotho_csv(args.captions), args.features, vocab)
    rcfg = RLConfig(lr=cfg.lr, batch=cfg.batch, max_len=cfg.max_len, seed=cfg.seed)
    model, log = train_scst(model, clips, rcfg, cfg.epochs)
    ckpt_dir, log_dir = _run_dirs(args.run_dir)
    model.save(ckpt_dir / "model_rl.ckpt")
    vocab.save(Path(args.run_dir) / "vocab.txt")
    write_reward_log(log_dir / "rl.jsonl", log)
    print(f"RL fine-tuned {cfg.epochs} epochs on {len(clips)} clips; checkpoint in {ckpt_dir}")
    return 0


def cmd_decode(args) -> int:
    cfg = resolve_config(args, default_lr=1e-3)
    vocab = Vocabulary.load(args.vocab)
    model = ToyCaptionModel.load(args.checkpoint)
    split = corpus.load_clotho_csv(args.captions)
    preds = {}
    for rec in split:
        context = encode_context(model, load_features(args.features, rec.id))
        hyp = beam_decode(model, context, cfg.beam, cfg.max_len)
        preds[rec.id] = " ".join(decode_to_words(hyp.tokens, vocab))
    corpus.write_predictions_csv(preds, args.output)
    print(f"decoded {len(preds)} clips to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    if args.results:
        results = metrics.read_results(args.results)
        instances = list(results.values())
    else:
        if not (args.predictions and args.references):
            raise CliError("give --results, or both --predictions and --references")
        preds = _load_predictions(args.predictions)
        refs = _load_references(args.references)
        missing_pred = sorted(set(refs) - set(preds))
        missing_ref = sorted(set(preds) - set(refs))
        if missing_pred or missing_ref:
            raise CliError(
                f"ids do not align; missing predictions: {missing_pred}; missing references: {missing_ref}"
            )
        instances = [metrics.EvalInstance(preds[k], refs[k]) for k in refs]
    spice = metrics.read_spice(args.spice) if args.spice else None
    text = metrics.evaluate_corpus(instances, spice).to_text()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_stats(args) -> int:
    phrase = normalize_and_tokenize(args.phrase)
    split = corpus.load_clotho_csv(args.captions)
    clips = [r.tokenized() for r in split]
    out = {
        "phrase": " ".join(phrase),
        "clips": len(clips),
        "clips_with_phrase": corpus.clip_phrase_count(clips, phrase),
        "captions_with_phrase": corpus.phrase_count([c for caps in clips for c in caps], phrase),
    }
    if args.predictions:
        preds = _load_predictions(args.predictions)
        out["predictions_with_phrase"] = corpus.phrase_count(preds.values(), phrase)
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key = value lines mirroring the long flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eps-label-smoothing", dest="eps_label_smoothing", type=float)
    p.add_argument("--reward", choices=["cider"])
    p.add_argument("--spec-augment", dest="spec_augment", choices=["on", "off"])
    p.add_argument("--batch", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--context-dim", dest="context_dim", type=int)
    p.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    p.add_argument("--decay-every", dest="decay_every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="audiocap", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract log-mel spectrograms from WAV files")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="cross-entropy training with label smoothing")
    p.add_argument("--captions", required=True, help="Clotho-style caption CSV")
    p.add_argument("--features", required=True, help="directory of .mel files or WAVs")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--vocab", help="use this vocabulary instead of building one")
    p.add_argument("--init-checkpoint", help="continue from a pre-trained checkpoint")
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rl-finetune", help="self-critical fine-tuning on CIDEr-D")
    p.add_argument("--captions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--run-dir", required=True)
    _add_run_options(p)
    p.set_defaults(func=cmd_rl_finetune)

    p = sub.add_parser("decode", help="beam-search captions for every clip in a CSV")
    p.add_argument("--captions", required=True, help="CSV listing the clips to caption")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--output", required=True)
    _add_run_options(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--predictions", help="prediction CSV (file_name,caption_predicted) or JSONL")
    p.add_argument("--references", help="Clotho caption CSV or JSONL {id, references}")
    p.add_argument("--results", help="JSONL {id, candidate, references}")
    p.add_argument("--spice", help='JSON {"corpus": <score>} from an external SPICE run')
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="count captions and clips containing a phrase")
    p.add_argument("--captions", required=True)
    p.add_argument("--phrase", required=True)
    p.add_argument("--predictions")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"audiocap {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
