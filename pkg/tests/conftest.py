from typing import Sequence

import pytest

from CatMiner.ingest import RawTable, build_table_record, load_units
from CatMiner.models import TableRecord
from synthetic_corpus import build_synthetic_corpus, write_synthetic_corpus


@pytest.fixture(scope="session")
def units():
    return load_units()


@pytest.fixture
def make_record(units):
    def _make(page_title: str, headers: Sequence[str], rows: Sequence[Sequence[str]], table_id: str = "t") -> TableRecord:
        raw = RawTable(
            page_title=page_title,
            headers=tuple(headers),
            rows=tuple(tuple(row) for row in rows),
            table_id=table_id,
        )
        return build_table_record(raw, units)

    return _make


@pytest.fixture
def synthetic_corpus():
    return build_synthetic_corpus()


@pytest.fixture
def synthetic_corpus_file(tmp_path):
    path = tmp_path / "corpus.json"
    expected = write_synthetic_corpus(path)
    return path, expected


@pytest.fixture(autouse=True)
def _log_file(tmp_path, monkeypatch):
    monkeypatch.setenv("CATMINER_LOG_FILE", str(tmp_path / "catminer.log"))
