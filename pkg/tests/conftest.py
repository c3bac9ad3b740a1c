import json
from pathlib import Path

import pytest

from linearrag.corpus import Corpus, PassageRecord, corpus_from_records, ingest
from linearrag.embedding import HashEncoder, build_store
from linearrag.trigraph import build

DATA_DIR = Path(__file__).parent / "data"

# Committed fixture settings; frozen together with the files in tests/data.
CHAIN_ENCODER = {"dim": 128, "seed": 0}
MULTIHOP_ENCODER = {"dim": 256, "seed": 4}


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


def make_corpus(texts, doc_keys=None, titles=None) -> Corpus:
    records = []
    for i, text in enumerate(texts):
        records.append(
            PassageRecord(
                doc_key=doc_keys[i] if doc_keys else None,
                title=titles[i] if titles else None,
                text=text,
            )
        )
    return corpus_from_records(records)


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n")
    return path


@pytest.fixture(scope="session")
def chain_corpus() -> Corpus:
    return ingest(DATA_DIR / "chain" / "corpus.jsonl")


@pytest.fixture(scope="session")
def chain_index(chain_corpus):
    graph = build(chain_corpus)
    store = build_store(graph, HashEncoder(**CHAIN_ENCODER))
    return graph, store
