"""Text encoding contract, cosine scoring, and the on-disk vector store.

Everything downstream only needs L2-normalized float32 vectors, one per
entity canonical key, sentence, and passage. The built-in ``hash`` encoder
is a fully deterministic bag-of-words hasher intended for tests and offline
experiments; real sentence encoders plug in either through the encoder
registry (in process) or by importing vector files written in the store
layout (offline).

Vector file layout (little-endian): 8-byte magic ``LRGVEC01``, uint32
format version, uint32 dim, uint64 row count, uint32 encoder-id length,
encoder id (UTF-8), then rows*dim float32 values.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ConfigError, ConsistencyError, EncodingError
from .trigraph import TriGraph

MAGIC = b"LRGVEC01"
FILE_VERSION = 1

NORM_TOLERANCE = 1e-4


@dataclass(frozen=True)
class EncoderContract:
    id: str
    dim: int
    deterministic: bool = True


class Encoder(Protocol):
    contract: EncoderContract

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray: ...


def _tokens(text: str) -> list[str]:
    out: list[str] = []
    current: list[str] = []
    for ch in text.casefold():
        if ch.isalnum():
            current.append(ch)
        elif current:
            out.append("".join(current))
            current = []
    if current:
        out.append("".join(current))
    return out


def _bucket_sign(token: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(
        f"{seed}:{token}".encode("utf-8"), digest_size=8
    ).digest()
    value = int.from_bytes(digest, "little")
    return value % dim, 1.0 if (value >> 63) & 1 == 0 else -1.0


def hash_encode(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic bag-of-words hash embedding.

    Tokens are maximal alphanumeric runs of the case-folded text. Each token
    is hashed (keyed blake2b) to a bucket in [0, dim) and a sign, and the
    signed counts are L2-normalized. If the accumulation is all zero (no
    tokens, or signs cancelled), the result is the basis vector at the
    bucket of the full text, so no zero vector can ever be produced.
    """
    if dim < 8:
        raise ConfigError(f"hash encoder dim must be >= 8, got {dim}")
    acc = np.zeros(dim, dtype=np.float32)
    for token in _tokens(text):
        bucket, sign = _bucket_sign(token, dim, seed)
        acc[bucket] += sign
    if not np.any(acc):
        bucket, _ = _bucket_sign(text, dim, seed)
        acc[bucket] = 1.0
    return (acc / np.linalg.norm(acc)).astype(np.float32)


class HashEncoder:
    """The built-in deterministic encoder; id form is ``hash:<dim>:<seed>``."""

    def __init__(self, dim: int, seed: int = 0):
        if dim < 8:
            raise ConfigError(f"hash encoder dim must be >= 8, got {dim}")
        self.dim = dim
        self.seed = seed
        self.contract = EncoderContract(
            id=f"hash:{dim}:{seed}", dim=dim, deterministic=True
        )

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([hash_encode(t, self.dim, self.seed) for t in texts])


_ENCODER_FACTORIES: dict[str, Callable[..., Encoder]] = {}


def register_encoder(name: str, factory: Callable[..., Encoder]) -> None:
    _ENCODER_FACTORIES[name] = factory


register_encoder("hash", HashEncoder)


def make_encoder(name: str, **params) -> Encoder:
    """Instantiate a registered encoder; unknown names are config errors."""
    factory = _ENCODER_FACTORIES.get(name)
    if factory is None:
        raise ConfigError(f"unknown encoder: {name!r}")
    return factory(**params)


def resolve_encoder(encoder_id: str) -> Encoder | None:
    """Rebuild an encoder from a self-describing id, if possible.

    ``hash:<dim>:<seed>`` ids reconstruct the built-in hash encoder. Ids of
    external encoders return None; the caller must attach one explicitly
    before queries can be embedded.
    """
    parts = encoder_id.split(":")
    if parts[0] == "hash" and len(parts) == 3:
        try:
            return HashEncoder(dim=int(parts[1]), seed=int(parts[2]))
        except ValueError:
            return None
    return None


def encode_batch(texts: Sequence[str], contract: EncoderContract) -> np.ndarray:
    """Encode texts under a contract, resolving the encoder from its id."""
    encoder = resolve_encoder(contract.id)
    if encoder is None:
        raise EncodingError(
            f"encoder {contract.id!r} is not available in-process; "
            "import its vectors from files instead"
        )
    vectors = encoder.encode_batch(texts)
    if vectors.shape[1:] != (contract.dim,):
        raise EncodingError(
            f"encoder {contract.id!r} produced dim {vectors.shape[1:]}, "
            f"contract says {contract.dim}"
        )
    return vectors


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two L2-normalized vectors."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.astype(np.float64), b.astype(np.float64)))


def validate_normalized(rows: np.ndarray, what: str) -> None:
    if rows.size == 0:
        return
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > NORM_TOLERANCE
    if np.any(bad):
        raise ConsistencyError(
            f"{what}: {int(bad.sum())} vector(s) are not L2-normalized"
        )


@dataclass(eq=False)
class EmbeddingStore:
    dim: int
    encoder_id: str
    entity_vectors: np.ndarray  # (n_entities, dim) float32
    sentence_vectors: np.ndarray  # (n_sentences, dim)
    passage_vectors: np.ndarray  # (n_passages, dim)
    encoder: Encoder | None = field(default=None, repr=False)

    def encode_query(self, text: str) -> np.ndarray:
        if self.encoder is None:
            raise ConfigError(
                f"store built with encoder {self.encoder_id!r} cannot embed "
                "queries; attach an in-process encoder"
            )
        vec = self.encoder.encode_batch([text])[0]
        return vec.astype(np.float64)

    def matches(self, graph: TriGraph) -> bool:
        return (
            self.entity_vectors.shape[0] == graph.n_entities
            and self.sentence_vectors.shape[0] == graph.n_sentences
            and self.passage_vectors.shape[0] == graph.n_passages
        )


def build_store(graph: TriGraph, encoder: Encoder) -> EmbeddingStore:
    """Encode entity canonicals, sentences, and passages for a graph."""
    entity_texts = [r.canonical for r in graph.entity_registry.records]
    sentence_texts = [s.text for s in graph.corpus.sentences]
    passage_texts = [p.text for p in graph.corpus.passages]
    return EmbeddingStore(
        dim=encoder.contract.dim,
        encoder_id=encoder.contract.id,
        entity_vectors=encoder.encode_batch(entity_texts),
        sentence_vectors=encoder.encode_batch(sentence_texts),
        passage_vectors=encoder.encode_batch(passage_texts),
        encoder=encoder,
    )


def extend_store(
    store: EmbeddingStore,
    graph: TriGraph,
    encoder: Encoder | None = None,
) -> EmbeddingStore:
    """Encode whatever nodes the store is missing for a grown graph.

    Existing rows are kept verbatim; only appended entities, sentences and
    passages are encoded. Row counts may only grow.
    """
    encoder = encoder or store.encoder
    if encoder is None:
        raise ConfigError(
            f"store built with encoder {store.encoder_id!r} cannot be "
            "extended without an in-process encoder"
        )
    new_entities = [
        r.canonical
        for r in graph.entity_registry.records[store.entity_vectors.shape[0] :]
    ]
    new_sentences = [
        s.text for s in graph.corpus.sentences[store.sentence_vectors.shape[0] :]
    ]
    new_passages = [
        p.text for p in graph.corpus.passages[store.passage_vectors.shape[0] :]
    ]
    return EmbeddingStore(
        dim=store.dim,
        encoder_id=store.encoder_id,
        entity_vectors=_stack(store.entity_vectors, encoder.encode_batch(new_entities)),
        sentence_vectors=_stack(
            store.sentence_vectors, encoder.encode_batch(new_sentences)
        ),
        passage_vectors=_stack(
            store.passage_vectors, encoder.encode_batch(new_passages)
        ),
        encoder=encoder,
    )


def _stack(existing: np.ndarray, extra: np.ndarray) -> np.ndarray:
    if extra.shape[0] == 0:
        return existing
    return np.vstack([existing, extra])


def write_vector_file(path: str | Path, rows: np.ndarray, encoder_id: str) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError("vector file payload must be a 2-D array")
    encoded_id = encoder_id.encode("utf-8")
    with Path(path).open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIQI", FILE_VERSION, rows.shape[1], rows.shape[0], len(encoded_id)))
        f.write(encoded_id)
        f.write(rows.tobytes())


def read_vector_file(path: str | Path) -> tuple[np.ndarray, str]:
    raw = Path(path).read_bytes()
    header = struct.calcsize("<IIQI")
    if len(raw) < len(MAGIC) + header or raw[: len(MAGIC)] != MAGIC:
        raise ConsistencyError(f"{path}: not a vector store file")
    version, dim, rows, id_len = struct.unpack(
        "<IIQI", raw[len(MAGIC) : len(MAGIC) + header]
    )
    if version != FILE_VERSION:
        raise ConsistencyError(f"{path}: unsupported vector file version {version}")
    offset = len(MAGIC) + header
    encoder_id = raw[offset : offset + id_len].decode("utf-8")
    offset += id_len
    expected = rows * dim * 4
    payload = raw[offset:]
    if len(payload) != expected:
        raise ConsistencyError(
            f"{path}: expected {expected} bytes of vector data, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    return data, encoder_id


_STORE_FILES = ("entities.vec", "sentences.vec", "passages.vec")


def save_store(store: EmbeddingStore, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = (store.entity_vectors, store.sentence_vectors, store.passage_vectors)
    for name, rows in zip(_STORE_FILES, arrays):
        write_vector_file(directory / name, rows, store.encoder_id)


def load_store(
    directory: str | Path,
    graph: TriGraph | None = None,
    encoder: Encoder | None = None,
) -> EmbeddingStore:
    """Load the three vector files, validating norms and (optionally)
    row-count agreement with a graph."""
    directory = Path(directory)
    arrays: list[np.ndarray] = []
    ids: list[str] = []
    for name in _STORE_FILES:
        rows, encoder_id = read_vector_file(directory / name)
        validate_normalized(rows, f"{name}")
        arrays.append(rows)
        ids.append(encoder_id)
    if len(set(ids)) != 1:
        raise ConsistencyError(f"vector files disagree on encoder id: {ids}")
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise ConsistencyError(f"vector files disagree on dim: {sorted(dims)}")
    store = EmbeddingStore(
        dim=arrays[0].shape[1],
        encoder_id=ids[0],
        entity_vectors=arrays[0],
        sentence_vectors=arrays[1],
        passage_vectors=arrays[2],
        encoder=encoder or resolve_encoder(ids[0]),
    )
    if graph is not None and not store.matches(graph):
        raise ConsistencyError(
            "embedding store row counts do not match the graph: "
            f"store=({store.entity_vectors.shape[0]} entities, "
            f"{store.sentence_vectors.shape[0]} sentences, "
            f"{store.passage_vectors.shape[0]} passages), graph="
            f"({graph.n_entities}, {graph.n_sentences}, {graph.n_passages})"
        )
    return store
