"""Multi-reference caption metrics: BLEU, ROUGE-L, exact-match METEOR, CIDEr-D, SPIDEr.

Every metric works on pre-tokenized captions.  Tokens only need to be
hashable, so word lists and vocabulary id lists are both accepted.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

from .textproc import normalize_and_tokenize

Tokens = Sequence[Hashable]

CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0
ROUGE_BETA = 1.2


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalInstance:
    candidate: tuple
    references: tuple

    def __init__(self, candidate: Tokens, references: Sequence[Tokens]):
        refs = tuple(tuple(r) for r in references)
        if not refs:
            raise MetricError("an evaluation instance needs at least one reference")
        object.__setattr__(self, "candidate", tuple(candidate))
        object.__setattr__(self, "references", refs)


def _check_corpus(instances: Sequence[EvalInstance]) -> None:
    if not instances:
        raise MetricError("empty corpus")


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BleuStats:
    precisions: tuple[float, ...]
    brevity_penalty: float
    candidate_length: int
    reference_length: int


def _closest_ref_length(cand_len: int, refs: Sequence[Tokens]) -> int:
    # ties go to the shorter reference
    return min((abs(len(r) - cand_len), len(r)) for r in refs)[1]


def bleu_stats(instances: Sequence[EvalInstance], max_n: int = 4) -> BleuStats:
    """Corpus-pooled clipped n-gram precisions and the brevity penalty."""
    if not 1 <= max_n <= 4:
        raise MetricError(f"max_n must be in 1..4, got {max_n}")
    _check_corpus(instances)
    matched = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for inst in instances:
        c_len += len(inst.candidate)
        r_len += _closest_ref_length(len(inst.candidate), inst.references)
        for n in range(1, max_n + 1):
            cand = ngrams(inst.candidate, n)
            max_ref = Counter()
            for ref in inst.references:
                max_ref |= ngrams(ref, n)
            matched[n - 1] += sum(min(c, max_ref[g]) for g, c in cand.items())
            total[n - 1] += sum(cand.values())
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matched, total))
    if c_len == 0:
        bp = 0.0
    elif c_len < r_len:
        bp = math.exp(1.0 - r_len / c_len)
    else:
        bp = 1.0
    return BleuStats(precisions, bp, c_len, r_len)


def bleu(instances: Sequence[EvalInstance], max_n: int = 4) -> list[float]:
    """BLEU_1..BLEU_max_n with uniform weights over orders 1..n."""
    stats = bleu_stats(instances, max_n)
    scores = []
    for n in range(1, max_n + 1):
        p = stats.precisions[:n]
        if min(p) == 0.0:
            scores.append(0.0)
        else:
            scores.append(stats.brevity_penalty * math.exp(sum(math.log(x) for x in p) / n))
    return scores


# --------------------------------------------------------------------------
# ROUGE-L
# --------------------------------------------------------------------------


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(candidate: Tokens, references: Sequence[Tokens], beta: float = ROUGE_BETA) -> float:
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


def rouge_l(instances: Sequence[EvalInstance], beta: float = ROUGE_BETA) -> float:
    _check_corpus(instances)
    return float(np.mean([rouge_l_sentence(i.candidate, i.references, beta) for i in instances]))


# --------------------------------------------------------------------------
# METEOR (exact match only)
# --------------------------------------------------------------------------


def align_exact(candidate: Tokens, reference: Tokens) -> tuple[int, int]:
    """(matches, chunks) of the one-to-one exact alignment with the most
    matches and, among those, the fewest chunks."""
    cand = tuple(candidate)
    ref = tuple(reference)
    max_matches = sum((Counter(cand) & Counter(ref)).values())
    if max_matches == 0:
        return 0, 0
    positions = {}
    for j, w in enumerate(ref):
        positions.setdefault(w, []).append(j)
    # suffix counts of matchable words bound how many matches are still reachable
    suffix = [0] * (len(cand) + 1)
    for i in range(len(cand) - 1, -1, -1):
        suffix[i] = suffix[i + 1] + (cand[i] in positions)

    @lru_cache(maxsize=None)
    def best(i: int, prev: int, used: int, need: int) -> float:
        # min chunks covering cand[i:] given cand[i-1] aligned to ref[prev] (-1: unaligned)
        if need == 0:
            return 0
        if i == len(cand) or suffix[i] < need:
            return math.inf
        result = best(i + 1, -1, used, need)
        for j in positions.get(cand[i], ()):
            if used >> j & 1:
                continue
            cost = 0 if prev >= 0 and j == prev + 1 else 1
            result = min(result, cost + best(i + 1, j, used | 1 << j, need - 1))
        return result

    chunks = best(0, -1, 0, max_matches)
    return max_matches, int(chunks)


def meteor_sentence(candidate: Tokens, reference: Tokens) -> float:
    matches, chunks = align_exact(candidate, reference)
    if matches == 0:
        return 0.0
    p = matches / len(candidate)
    r = matches / len(reference)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1 - penalty)


def meteor_lite(instances: Sequence[EvalInstance]) -> float:
    _check_corpus(instances)
    return float(
        np.mean([max(meteor_sentence(i.candidate, r) for r in i.references) for i in instances])
    )


# --------------------------------------------------------------------------
# CIDEr-D
# --------------------------------------------------------------------------


class IdfStats:
    """Document frequencies of 1..n-grams over a collection of reference sets.

    One document is one reference set: an n-gram counts once per set no
    matter how many of its references contain it.
    """

    def __init__(self, reference_sets: Sequence[Sequence[Tokens]], n: int = 4):
        if not reference_sets:
            raise MetricError("IDF statistics need at least one reference set")
        self.n = n
        self.num_docs = len(reference_sets)
        self.log_num_docs = math.log(float(self.num_docs))
        df = Counter()
        for refs in reference_sets:
            grams = set()
            for ref in refs:
                for k in range(1, n + 1):
                    grams.update(ngrams(ref, k))
            df.update(grams)
        self.document_frequency = df

    def idf(self, gram: tuple) -> float:
        return self.log_num_docs - math.log(max(1.0, self.document_frequency.get(gram, 0.0)))

    def vectorize(self, tokens: Tokens):
        vecs = [dict() for _ in range(self.n)]
        norms = [0.0] * self.n
        for k in range(1, self.n + 1):
            for gram, tf in ngrams(tokens, k).items():
                w = tf * self.idf(gram)
                vecs[k - 1][gram] = w
                norms[k - 1] += w * w
        return vecs, [math.sqrt(x) for x in norms], len(tokens)


def _cider_sim(hyp, ref, sigma: float) -> np.ndarray:
    vh, nh, lh = hyp
    vr, nr, lr = ref
    val = np.zeros(len(vh))
    for k in range(len(vh)):
        for gram, w in vh[k].items():
            if gram in vr[k]:
                val[k] += min(w, vr[k][gram]) * vr[k][gram]
        if nh[k] != 0 and nr[k] != 0:
            val[k] /= nh[k] * nr[k]
        val[k] *= math.exp(-((lh - lr) ** 2) / (2 * sigma**2))
    return val


def cider_d_sentence(
    candidate: Tokens, references: Sequence[Tokens], stats: IdfStats, sigma: float = CIDER_SIGMA
) -> float:
    """CIDEr-D of one candidate against its references under fixed IDF statistics."""
    if not references:
        raise MetricError("CIDEr needs at least one reference")
    hyp = stats.vectorize(candidate)
    total = np.zeros(stats.n)
    for ref in references:
        total += _cider_sim(hyp, stats.vectorize(ref), sigma)
    return float(np.mean(total) / len(references) * CIDER_SCALE)


def cider_scores(instances: Sequence[EvalInstance], n: int = 4, sigma: float = CIDER_SIGMA) -> list[float]:
    _check_corpus(instances)
    stats = IdfStats([i.references for i in instances], n)
    return [cider_d_sentence(i.candidate, i.references, stats, sigma) for i in instances]


def cider(instances: Sequence[EvalInstance], n: int = 4, sigma: float = CIDER_SIGMA) -> float:
    """Corpus CIDEr-D with IDF taken from this corpus's reference sets."""
    return float(np.mean(cider_scores(instances, n, sigma)))


# --------------------------------------------------------------------------
# SPIDEr and reports
# --------------------------------------------------------------------------


def spider_combine(cider_score: float, spice_score: float) -> float:
    for name, v in (("cider", cider_score), ("spice", spice_score)):
        if not math.isfinite(v) or v < 0:
            raise MetricError(f"{name} score must be finite and non-negative, got {v}")
    return (cider_score + spice_score) / 2


@dataclass(frozen=True)
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    meteor: float
    cider: float
    spice: Optional[float] = None
    spider: Optional[float] = None
    meteor_variant: str = "exact-match"

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = v
        return out

    def to_text(self) -> str:
        """JSON object with fixed keys, scores printed with 4 decimals."""
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f'  "{k}": ' + (f"{v:.4f}" if isinstance(v, float) else json.dumps(v)))
        return "{\n" + ",\n".join(lines) + "\n}\n"


def evaluate_corpus(instances: Sequence[EvalInstance], external_spice: Optional[float] = None) -> MetricReport:
    _check_corpus(instances)
    b = bleu(instances, 4)
    c = cider(instances)
    spider = None if external_spice is None else spider_combine(c, external_spice)
    return MetricReport(
        bleu1=b[0],
        bleu2=b[1],
        bleu3=b[2],
        bleu4=b[3],
        rouge_l=rouge_l(instances),
        meteor=meteor_lite(instances),
        cider=c,
        spice=external_spice,
        spider=spider,
    )


# --------------------------------------------------------------------------
# Results files: one JSON object per line, {"id", "candidate", "references"}
# --------------------------------------------------------------------------


def _as_tokens(x) -> list[str]:
    return normalize_and_tokenize(x) if isinstance(x, str) else [str(w) for w in x]


def read_results(path) -> dict[str, EvalInstance]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = str(rec["id"])
                refs = [_as_tokens(r) for r in rec["references"]]
                inst = EvalInstance(_as_tokens(rec["candidate"]), refs)
            except (KeyError, TypeError, json.JSONDecodeError, MetricError) as e:
                raise MetricError(f"{path}:{lineno}: bad results record ({e})") from e
            if not 1 <= len(refs) <= 5:
                raise MetricError(f"{path}:{lineno}: expected 1-5 references, got {len(refs)}")
            if key in out:
                raise MetricError(f"{path}:{lineno}: duplicate id {key!r}")
            out[key] = inst
    return out


def write_results(path, results: Mapping[str, EvalInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, inst in results.items():
            rec = {
                "id": key,
                "candidate": " ".join(map(str, inst.candidate)),
                "references": [" ".join(map(str, r)) for r in inst.references],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_spice(path) -> float:
    """Externally computed corpus SPICE: a JSON object ``{"corpus": <score>}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return float(data["corpus"])
    except (KeyError, TypeError, ValueError) as e:
        raise MetricError(f"{path}: expected {{\"corpus\": <score>}}") from e
