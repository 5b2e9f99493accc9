from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from textrobust.embeddings import EmbeddingStore

ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = ROOT / "fixtures" / "synthetic"

_acceptance_lines: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    _acceptance_lines.append(f"[{status}] criterion {number:>2}: {name}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def make_store(tokens, vectors) -> EmbeddingStore:
    vectors = np.asarray(vectors, dtype=np.float64)
    return EmbeddingStore(dim=vectors.shape[1], vocab=tuple(tokens), vectors=vectors)


@pytest.fixture
def toy_store() -> EmbeddingStore:
    return make_store(["a", "b", "c"], [[1.0, 0.0], [0.0, 1.0], [0.9, 0.1]])


@pytest.fixture(scope="session")
def random_store() -> EmbeddingStore:
    rng = np.random.default_rng(11)
    return make_store([f"w{i}" for i in range(500)], rng.standard_normal((500, 8)))


@pytest.fixture
def write(tmp_path):
    def _write(name: str, text: str) -> Path:
        p = tmp_path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        return p

    return _write
