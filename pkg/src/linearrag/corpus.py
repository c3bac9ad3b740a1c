"""Corpus ingestion and punctuation-based sentence segmentation.

The document model is deliberately small: passages with dense integer ids,
sentences with byte spans back into their passage, and a content digest that
is stable across re-ingestion and extendable when passages are appended.

Input format is line-delimited JSON records with fields ``doc_key``
(optional), ``title`` (optional) and ``text`` (required). A title, when
present, is prepended to the text with a ``": "`` separator before
segmentation, so it participates in everything downstream.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyCorpusError, IngestError

logger = logging.getLogger(__name__)

# Sentence terminals: split after these when followed by whitespace or
# end-of-text. Abbreviations ("Dr.") over-split by design; downstream
# linking is entity-keyed and tolerant of short sentences.
SENTENCE_TERMINALS = frozenset(".!?")

# Hard upper bound on a single sentence, in UTF-8 bytes. Longer spans are
# split at the last whitespace before the limit.
MAX_SENTENCE_BYTES = 8192

_DIGEST_SEED = "linearrag-corpus-v1"

TITLE_SEPARATOR = ": "


@dataclass(frozen=True)
class Passage:
    """One corpus passage. ``text`` already includes the title, if any."""

    id: int
    doc_key: str
    title: str | None
    text: str


@dataclass(frozen=True)
class Sentence:
    """A sentence of a passage; ``char_span`` is a half-open byte span
    into the UTF-8 encoding of the owning passage's text."""

    id: int
    passage_id: int
    char_span: tuple[int, int]
    text: str


@dataclass(frozen=True)
class Corpus:
    passages: tuple[Passage, ...]
    sentences: tuple[Sentence, ...]
    source_digest: str
    skipped: int = 0

    @cached_property
    def _sentences_by_passage(self) -> dict[int, tuple[Sentence, ...]]:
        grouped: dict[int, list[Sentence]] = {}
        for sentence in self.sentences:
            grouped.setdefault(sentence.passage_id, []).append(sentence)
        return {pid: tuple(group) for pid, group in grouped.items()}

    def sentences_of(self, passage_id: int) -> tuple[Sentence, ...]:
        return self._sentences_by_passage.get(passage_id, ())

    @cached_property
    def key_to_passage_ids(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, list[int]] = {}
        for passage in self.passages:
            out.setdefault(passage.doc_key, []).append(passage.id)
        return {key: tuple(ids) for key, ids in out.items()}

    def __len__(self) -> int:
        return len(self.passages)


def byte_offset_table(text: str) -> list[int]:
    """Per-character byte offsets into the UTF-8 encoding (len(text)+1 entries)."""
    table = [0] * (len(text) + 1)
    running = 0
    for i, ch in enumerate(text):
        table[i] = running
        running += len(ch.encode("utf-8"))
    table[len(text)] = running
    return table


def _trim(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def segment_sentences(passage_text: str) -> list[tuple[int, int]]:
    """Split a passage into sentence byte spans.

    A boundary is placed after '.', '!' or '?' when the next character is
    whitespace or end-of-text. A trailing fragment without terminal
    punctuation becomes a final sentence. Spans exclude surrounding
    whitespace; empty spans are dropped. Spans longer than
    ``MAX_SENTENCE_BYTES`` are hard-split at the last whitespace before the
    limit (or at the limit itself if the span has no whitespace).
    """
    if not passage_text:
        return []
    byte_of = byte_offset_table(passage_text)
    n = len(passage_text)

    raw_spans: list[tuple[int, int]] = []
    start = 0
    for i, ch in enumerate(passage_text):
        if ch in SENTENCE_TERMINALS and (i + 1 == n or passage_text[i + 1].isspace()):
            raw_spans.append((start, i + 1))
            start = i + 1
    if start < n:
        raw_spans.append((start, n))

    spans: list[tuple[int, int]] = []
    for s, e in raw_spans:
        s, e = _trim(passage_text, s, e)
        if s >= e:
            continue
        spans.extend(_split_oversized(passage_text, byte_of, s, e))

    return [(byte_of[s], byte_of[e]) for s, e in spans]


def _split_oversized(
    text: str, byte_of: list[int], start: int, end: int
) -> list[tuple[int, int]]:
    """Split a trimmed char span into pieces of at most MAX_SENTENCE_BYTES."""
    pieces: list[tuple[int, int]] = []
    while byte_of[end] - byte_of[start] > MAX_SENTENCE_BYTES:
        # Largest char boundary within the byte budget.
        cut = start
        for i in range(start + 1, end):
            if byte_of[i] - byte_of[start] > MAX_SENTENCE_BYTES:
                break
            cut = i
        split_at = cut
        for i in range(cut, start, -1):
            if text[i].isspace():
                split_at = i
                break
        if split_at == start:  # no whitespace available
            split_at = cut
        s, e = _trim(text, start, split_at)
        if s < e:
            pieces.append((s, e))
        start, _ = _trim(text, split_at, end)
    s, e = _trim(text, start, end)
    if s < e:
        pieces.append((s, e))
    return pieces


def sentence_text(passage_text: str, span: tuple[int, int]) -> str:
    """Recover the sentence text addressed by a byte span."""
    return passage_text.encode("utf-8")[span[0] : span[1]].decode("utf-8")


@dataclass(frozen=True)
class PassageRecord:
    """A parsed input record, prior to id assignment."""

    doc_key: str | None
    title: str | None
    text: str


def initial_digest() -> str:
    return hashlib.sha256(_DIGEST_SEED.encode("utf-8")).hexdigest()


def chain_digest(prev: str, texts: Iterable[str]) -> str:
    """Extend a corpus digest with additional passage texts, in order.

    The digest is a hash chain over composed passage texts, so ingesting a
    prefix and then appending a suffix yields the same value as ingesting
    the whole corpus at once.
    """
    digest = prev
    for text in texts:
        record = hashlib.sha256(text.encode("utf-8")).hexdigest()
        digest = hashlib.sha256((digest + record).encode("utf-8")).hexdigest()
    return digest


def compose_text(title: str | None, body: str) -> str:
    if title and title.strip():
        return f"{title.strip()}{TITLE_SEPARATOR}{body}"
    return body


def corpus_from_records(
    records: Sequence[PassageRecord],
    skipped: int = 0,
    passage_id_base: int = 0,
    sentence_id_base: int = 0,
    digest_base: str | None = None,
) -> Corpus:
    """Assemble a Corpus from parsed records, assigning dense ids."""
    if not records:
        raise EmptyCorpusError("no valid passages")
    passages: list[Passage] = []
    sentences: list[Sentence] = []
    sid = sentence_id_base
    for offset, record in enumerate(records):
        pid = passage_id_base + offset
        text = compose_text(record.title, record.text)
        doc_key = record.doc_key if record.doc_key is not None else str(pid)
        passages.append(Passage(id=pid, doc_key=doc_key, title=record.title, text=text))
        for span in segment_sentences(text):
            sentences.append(
                Sentence(
                    id=sid,
                    passage_id=pid,
                    char_span=span,
                    text=sentence_text(text, span),
                )
            )
            sid += 1
    digest = chain_digest(
        digest_base if digest_base is not None else initial_digest(),
        (p.text for p in passages),
    )
    return Corpus(
        passages=tuple(passages),
        sentences=tuple(sentences),
        source_digest=digest,
        skipped=skipped,
    )


def parse_record(line: str) -> PassageRecord | None:
    """Parse one JSONL record; None if the line is malformed or empty-text."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    text = obj.get("text")
    if not isinstance(text, str) or not text.strip():
        return None
    doc_key = obj.get("doc_key")
    if doc_key is not None and not isinstance(doc_key, str):
        return None
    title = obj.get("title")
    if title is not None and not isinstance(title, str):
        return None
    return PassageRecord(doc_key=doc_key, title=title, text=text)


def ingest(
    path: str | Path,
    format: str = "jsonl",
    passage_id_base: int = 0,
    sentence_id_base: int = 0,
) -> Corpus:
    """Ingest a JSONL corpus file.

    Malformed lines (bad JSON, missing or empty text) are skipped with a
    warning and counted in ``Corpus.skipped``. Zero valid passages is an
    error.
    """
    if format != "jsonl":
        raise IngestError(f"unsupported corpus format: {format!r}")
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read corpus file {path}: {exc}") from exc

    records: list[PassageRecord] = []
    skipped = 0
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        record = parse_record(line)
        if record is None:
            skipped += 1
            logger.warning("%s:%d: skipping malformed record", path, lineno)
            continue
        records.append(record)

    if not records:
        raise EmptyCorpusError(f"no valid passages in {path} ({skipped} skipped)")
    if skipped:
        logger.warning("%s: skipped %d malformed record(s)", path, skipped)
    return corpus_from_records(
        records,
        skipped=skipped,
        passage_id_base=passage_id_base,
        sentence_id_base=sentence_id_base,
    )
