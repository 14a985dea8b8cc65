"""Caption dataset files and phrase statistics.

Clotho v2 caption CSVs have the header ``file_name,caption_1,...,caption_5``.
AudioCaps CSVs have ``audiocap_id,youtube_id,start_time,caption`` with one
row per caption; rows sharing a ``youtube_id`` form one clip.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .textproc import normalize_and_tokenize

CLOTHO_HEADER = ["file_name"] + [f"caption_{i}" for i in range(1, 6)]
AUDIOCAPS_HEADER = ["audiocap_id", "youtube_id", "start_time", "caption"]
PREDICTION_HEADER = ["file_name", "caption_predicted"]


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class ClipRecord:
    id: str
    captions: tuple[str, ...]
    audio_path: Optional[str] = None

    def __post_init__(self):
        if not 1 <= len(self.captions) <= 5:
            raise CorpusError(f"clip {self.id!r} needs 1-5 captions, has {len(self.captions)}")

    def tokenized(self) -> list[list[str]]:
        return [normalize_and_tokenize(c) for c in self.captions]


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    records: tuple[ClipRecord, ...]

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise CorpusError(f"duplicate clip id {r.id!r} in split {self.name!r}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def by_id(self) -> dict[str, ClipRecord]:
        return {r.id: r for r in self.records}


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: empty file") from None
        rows = [(reader.line_num, row) for row in reader if row]
    return header, rows


def load_clotho_csv(path, name: str = "train", audio_dir=None) -> DatasetSplit:
    header, rows = _read_rows(path)
    if header != CLOTHO_HEADER:
        raise CorpusError(f"{path}: expected header {','.join(CLOTHO_HEADER)}, got {','.join(header)}")
    records, seen = [], {}
    for line, row in rows:
        if len(row) != len(CLOTHO_HEADER):
            raise CorpusError(f"{path}: row {line}: expected {len(CLOTHO_HEADER)} fields, got {len(row)}")
        file_name, caps = row[0], [c for c in row[1:] if c.strip()]
        if not file_name:
            raise CorpusError(f"{path}: row {line}: empty file_name")
        if not caps:
            raise CorpusError(f"{path}: row {line}: no captions")
        if file_name in seen:
            raise CorpusError(f"{path}: row {line}: duplicate file_name {file_name!r} (first on row {seen[file_name]})")
        seen[file_name] = line
        audio = str(Path(audio_dir) / file_name) if audio_dir is not None else None
        records.append(ClipRecord(file_name, tuple(caps), audio))
    return DatasetSplit(name, tuple(records))


def write_clotho_csv(split: DatasetSplit, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CLOTHO_HEADER)
    for r in split.records:
        writer.writerow([r.id, *r.captions, *[""] * (5 - len(r.captions))])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def load_audiocaps_csv(path, name: str = "train") -> DatasetSplit:
    header, rows = _read_rows(path)
    if header != AUDIOCAPS_HEADER:
        raise CorpusError(f"{path}: expected header {','.join(AUDIOCAPS_HEADER)}, got {','.join(header)}")
    grouped: dict[str, list[str]] = {}
    for line, row in rows:
        if len(row) != len(AUDIOCAPS_HEADER):
            raise CorpusError(f"{path}: row {line}: expected {len(AUDIOCAPS_HEADER)} fields, got {len(row)}")
        caps = grouped.setdefault(row[1], [])
        if len(caps) == 5:
            raise CorpusError(f"{path}: row {line}: more than 5 captions for clip {row[1]!r}")
        caps.append(row[3])
    return DatasetSplit(name, tuple(ClipRecord(k, tuple(v)) for k, v in grouped.items()))


def merge_splits(a: DatasetSplit, b: DatasetSplit, name: Optional[str] = None) -> DatasetSplit:
    clash = set(a.ids()) & set(b.ids())
    if clash:
        raise CorpusError(f"cannot merge {a.name!r} and {b.name!r}: shared ids {sorted(clash)[:5]}")
    return DatasetSplit(name or a.name, a.records + b.records)


def load_predictions_csv(path) -> dict[str, str]:
    """DCASE-style submission file: ``file_name,caption_predicted``."""
    header, rows = _read_rows(path)
    if header != PREDICTION_HEADER:
        raise CorpusError(f"{path}: expected header {','.join(PREDICTION_HEADER)}")
    out = {}
    for line, row in rows:
        if len(row) != 2:
            raise CorpusError(f"{path}: row {line}: expected 2 fields, got {len(row)}")
        if row[0] in out:
            raise CorpusError(f"{path}: row {line}: duplicate file_name {row[0]!r}")
        out[row[0]] = row[1]
    return out


def write_predictions_csv(predictions: dict[str, str], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PREDICTION_HEADER)
    for k, v in predictions.items():
        writer.writerow([k, v])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


# --------------------------------------------------------------------------
# phrase statistics
# --------------------------------------------------------------------------


def contains_phrase(caption: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    phrase = list(phrase)
    return any(list(caption[i : i + n]) == phrase for i in range(len(caption) - n + 1))


def phrase_count(captions: Iterable[Sequence[str]], phrase: Sequence[str]) -> int:
    """Number of captions containing ``phrase`` as a contiguous word run."""
    if not phrase:
        raise CorpusError("phrase must contain at least one word")
    return sum(contains_phrase(c, phrase) for c in captions)


def clip_phrase_count(clips: Iterable[Sequence[Sequence[str]]], phrase: Sequence[str]) -> int:
    """Number of clips where at least one caption contains ``phrase``."""
    if not phrase:
        raise CorpusError("phrase must contain at least one word")
    return sum(any(contains_phrase(c, phrase) for c in caps) for caps in clips)
