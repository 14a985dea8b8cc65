"""Caption metrics, decoding, label-smoothed training and self-critical fine-tuning."""

from .textproc import Vocabulary, build_vocabulary, decode_to_words, encode, merge_vocabularies, normalize_and_tokenize
from .metrics import (
    EvalInstance,
    IdfStats,
    MetricReport,
    bleu,
    cider,
    evaluate_corpus,
    meteor_lite,
    rouge_l,
    spider_combine,
)
from .audiofeat import MelConfig, MelSpectrogram, log_mel, spec_augment
from .captioner import (
    ToyCaptionModel,
    TrainConfig,
    TrainingClip,
    adam_step,
    ce_loss_label_smoothed,
    encode_context,
    init_model,
    lr_at_epoch,
    next_token_logprobs,
    train_ce,
)
from .decode import Hypothesis, beam_decode, greedy_decode, sample_decode
from .scst import RLConfig, RewardSample, caption_reward, scst_gradient, train_scst
from .corpus import ClipRecord, DatasetSplit, load_clotho_csv, merge_splits, phrase_count

__version__ = "0.1.0"
