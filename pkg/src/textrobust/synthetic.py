"""Deterministic synthetic corpus, embedding space and lexicons for desk-scale runs.

Each class owns a cluster of long informative pseudo-words; documents mix those
with shared filler words and short lexicon words whose overall rate and mix
differ by class. Raw texts
carry capitals, punctuation, mentions, hashtags and URLs so preprocessing has
something to remove.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

from .corpus import THREE_WAY, TaskSchema

LEXICON_NAMES = ("hedges", "factives", "assertives")


@dataclass(frozen=True)
class SyntheticSpec:
    schema: TaskSchema = THREE_WAY
    n_docs: int = 2000
    dim: int = 24
    words_per_class: int = 60
    filler_words: int = 300
    words_per_lexicon: int = 12
    doc_len: tuple[int, int] = (14, 26)
    informative_rate: float = 0.20
    lexicon_rate: float = 0.25
    lexicon_rate_spread: float = 0.8
    cluster_noise: float = 0.9
    # short function-like lexicon words survive character attacks far more
    # often than long content words, so perturbed text still carries signal
    content_len: tuple[int, int] = (6, 10)
    filler_len: tuple[int, int] = (3, 8)
    lexicon_len: tuple[int, int] = (2, 3)
    seed: int = 2024


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str], lengths: tuple[int, int]) -> list[str]:
    letters = np.array(list(string.ascii_lowercase))
    out = []
    while len(out) < n:
        w = "".join(rng.choice(letters, size=int(rng.integers(lengths[0], lengths[1] + 1))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def generate(spec: SyntheticSpec = SyntheticSpec()):
    """Return ``(vocab, vectors, lexicons, records)``."""
    rng = np.random.default_rng(spec.seed)
    k = spec.schema.n_classes
    taken: set[str] = set()
    class_words = [_pseudo_words(rng, spec.words_per_class, taken, spec.content_len) for _ in range(k)]
    filler = _pseudo_words(rng, spec.filler_words, taken, spec.filler_len)
    lexicons = {name: _pseudo_words(rng, spec.words_per_lexicon, taken, spec.lexicon_len) for name in LEXICON_NAMES}

    centroids = rng.standard_normal((k, spec.dim))
    centroids *= 2.0 / np.linalg.norm(centroids, axis=1, keepdims=True)
    vocab, vecs = [], []
    for c, words in enumerate(class_words):
        for w in words:
            vocab.append(w)
            vecs.append(centroids[c] + spec.cluster_noise * rng.standard_normal(spec.dim))
    for w in filler:
        vocab.append(w)
        vecs.append(rng.standard_normal(spec.dim))
    lex_dirs = rng.standard_normal((len(LEXICON_NAMES), spec.dim))
    for li, name in enumerate(LEXICON_NAMES):
        for w in lexicons[name]:
            vocab.append(w)
            vecs.append(lex_dirs[li] + 0.5 * rng.standard_normal(spec.dim))
    vectors = np.round(np.array(vecs), 6)

    # class-specific lexicon preferences: class c leans on lexicon c mod L
    lex_pref = np.full((k, len(LEXICON_NAMES)), 0.5)
    for c in range(k):
        lex_pref[c, c % len(LEXICON_NAMES)] = 3.0
    lex_pref /= lex_pref.sum(axis=1, keepdims=True)

    records = []
    labels = np.arange(spec.n_docs) % k
    rng.shuffle(labels)
    for i, c in enumerate(labels):
        n = int(rng.integers(spec.doc_len[0], spec.doc_len[1] + 1))
        words = []
        # classes differ in how often they use lexicon words at all
        lex_rate = spec.lexicon_rate * (1.0 + spec.lexicon_rate_spread * (c - (k - 1) / 2) / max(1, (k - 1) / 2))
        for _ in range(n):
            u = rng.random()
            if u < spec.informative_rate:
                # mostly own class, sometimes a confusing other class
                src = c if rng.random() < 0.75 else int(rng.integers(k))
                words.append(class_words[src][int(rng.integers(spec.words_per_class))])
            elif u < spec.informative_rate + lex_rate:
                li = int(rng.choice(len(LEXICON_NAMES), p=lex_pref[c]))
                words.append(lexicons[LEXICON_NAMES[li]][int(rng.integers(spec.words_per_lexicon))])
            else:
                words.append(filler[int(rng.integers(spec.filler_words))])
        decorated = []
        for w in words:
            r = rng.random()
            if r < 0.05:
                w = w.capitalize()
            elif r < 0.08:
                w = w.upper()
            if rng.random() < 0.06:
                w += rng.choice([",", ".", "!", "?", "…"])
            decorated.append(w)
        if rng.random() < 0.3:
            decorated.insert(int(rng.integers(len(decorated) + 1)), f"@user{int(rng.integers(1000))}")
        if rng.random() < 0.3:
            decorated.append(f"#{filler[int(rng.integers(spec.filler_words))]}")
        if rng.random() < 0.2:
            decorated.append(f"https://t.co/{''.join(rng.choice(list('abcdef0123'), size=8))}")
        records.append({"id": f"doc{i:05d}", "text": " ".join(decorated), "label": spec.schema.classes[int(c)]})
    return vocab, vectors, lexicons, records


def write_fixture(out_dir: str | PathLike, spec: SyntheticSpec = SyntheticSpec()) -> Path:
    """Write corpus, embeddings, lexicons and a run config into ``out_dir``."""
    out = Path(out_dir)
    (out / "lexicons").mkdir(parents=True, exist_ok=True)
    vocab, vectors, lexicons, records = generate(spec)
    with open(out / "embeddings.txt", "w", encoding="utf-8") as fh:
        for w, v in zip(vocab, vectors):
            fh.write(w + " " + " ".join(f"{x:.6f}" for x in v) + "\n")
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    for name, words in lexicons.items():
        (out / "lexicons" / f"{name}.txt").write_text(
            f"# synthetic {name} lexicon\n" + "\n".join(sorted(words)) + "\n", encoding="utf-8")
    config = {
        "task": spec.schema.name,
        "seed": 7,
        "paths": {
            "corpus": "corpus.jsonl",
            "embeddings": "embeddings.txt",
            "word_attack_embeddings": {"synthetic": "embeddings.txt"},
            "confusables": None,
            "lexicons": [f"lexicons/{n}.txt" for n in LEXICON_NAMES],
            "output": "out",
        },
        "split": {"test_fraction": 0.2},
        "perturbation": {"char_rate": 0.25, "word_rate": 0.25, "neighbor_rank": 1},
        "index": {"n_trees": 16, "leaf_size": 32},
        "grid": {
            "defenses": ["Tr", "TrHalfC", "TrHalfW", "TrFullC", "TrFullW", "EnsC", "EnsW", "EnsCW"],
            "attacks": ["Te", "TeC", "TeW", "TeMixed"],
            "threshold": 0.9,
            "histogram_bins": 20,
        },
        "train": {"learning_rate": 0.003, "dropout": 0.2, "epochs": 20, "hidden_width": 32, "batch_size": 32},
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return out
