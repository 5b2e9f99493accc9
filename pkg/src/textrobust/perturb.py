"""Character (homoglyph) and word (embedding neighbour) perturbations, and the
builders for perturbed training and test sets."""
from __future__ import annotations

import hashlib
import math
import weakref
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .confusables import ConfusablesTable, alternatives
from .corpus import (
    CHAR_PERTURBED, TE, TE_C, TE_MIXED, TE_W, TR, TR_FULL_C, TR_FULL_W, TR_HALF_C, TR_HALF_W, WORD_PERTURBED,
    Dataset, LabeledExample, Lexicon, with_clean_text,
)
from .embeddings import NeighborIndex, nearest
from .errors import DatasetError

CHAR, WORD = "char", "word"
DEFAULT_RATE = 0.25

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class PerturbationSpec:
    mode: str
    rate: float = DEFAULT_RATE
    seed: int = 0
    table: ConfusablesTable | None = field(default=None, repr=False)
    index: NeighborIndex | None = field(default=None, repr=False)
    neighbor_rank: int = 1

    def __post_init__(self):
        if self.mode not in (CHAR, WORD):
            raise ValueError(f"mode must be 'char' or 'word', got {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")
        if self.neighbor_rank < 1:
            raise ValueError("neighbor_rank must be positive")
        if self.mode == CHAR and (self.table is None or self.index is not None):
            raise ValueError("char mode needs a confusables table and no neighbour index")
        if self.mode == WORD and (self.index is None or self.table is not None):
            raise ValueError("word mode needs a neighbour index and no confusables table")


@dataclass(frozen=True)
class PerturbationReceipt:
    example_id: str
    positions_changed: tuple[int, ...]
    replacements: tuple[tuple[str, str], ...]
    eligible_count: int
    target_count: int

    def to_record(self, mode: str) -> dict:
        return {
            "id": self.example_id,
            "mode": mode,
            "eligible_count": self.eligible_count,
            "target_count": self.target_count,
            "positions_changed": list(self.positions_changed),
            "replacements": [list(p) for p in self.replacements],
        }


def id_hash(example_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(example_id.encode("utf-8"), digest_size=8).digest(), "little")


def example_rng(seed: int, example_id: str) -> np.random.Generator:
    """Per-example generator keyed on ``seed XOR hash(id)``; order independent."""
    return np.random.default_rng(np.uint64(((seed & _MASK64) ^ id_hash(example_id)) & _MASK64))


def _choose(rng: np.random.Generator, eligible: Sequence[int], n_units: int, rate: float) -> list[int]:
    target = min(math.floor(rate * n_units), len(eligible))
    if target == 0:
        return []
    picked = rng.choice(len(eligible), size=target, replace=False)
    return sorted(eligible[i] for i in picked)


def perturb_chars(text: str, spec: PerturbationSpec, example_id: str = "") -> tuple[str, PerturbationReceipt]:
    """Swap ``floor(rate * len(text))`` characters for confusable look-alikes."""
    if spec.mode != CHAR:
        raise ValueError("perturb_chars needs a char-mode spec")
    eligible = [i for i, ch in enumerate(text) if alternatives(spec.table, ch)]
    rng = example_rng(spec.seed, example_id)
    positions = _choose(rng, eligible, len(text), spec.rate)
    chars = list(text)
    pairs = []
    for pos in positions:
        alts = alternatives(spec.table, chars[pos])
        new = alts[int(rng.integers(len(alts)))]
        pairs.append((chars[pos], new))
        chars[pos] = new
    receipt = PerturbationReceipt(example_id, tuple(positions), tuple(pairs), len(eligible),
                                  min(math.floor(spec.rate * len(text)), len(eligible)))
    return "".join(chars), receipt


_neighbor_cache: "weakref.WeakKeyDictionary[NeighborIndex, dict]" = weakref.WeakKeyDictionary()


def ranked_neighbor(index: NeighborIndex, token: str, rank: int) -> str:
    """The ``rank``-th nearest other token (clamped to the last one available)."""
    cache = _neighbor_cache.setdefault(index, {})
    key = (token, rank)
    if key not in cache:
        hits = nearest(index, token, rank, exclude_self=True)
        cache[key] = hits[-1][0]
    return cache[key]


def perturb_words(tokens: Sequence[str], spec: PerturbationSpec, example_id: str = "") -> tuple[list[str], PerturbationReceipt]:
    """Swap ``floor(rate * len(tokens))`` in-vocabulary tokens for embedding neighbours."""
    if spec.mode != WORD:
        raise ValueError("perturb_words needs a word-mode spec")
    store = spec.index.store
    eligible = [i for i, tok in enumerate(tokens) if tok in store]
    rng = example_rng(spec.seed, example_id)
    positions = _choose(rng, eligible, len(tokens), spec.rate)
    out = list(tokens)
    pairs = []
    for pos in positions:
        new = ranked_neighbor(spec.index, out[pos], spec.neighbor_rank)
        pairs.append((out[pos], new))
        out[pos] = new
    receipt = PerturbationReceipt(example_id, tuple(positions), tuple(pairs), len(eligible),
                                  min(math.floor(spec.rate * len(tokens)), len(eligible)))
    return out, receipt


def perturb_example(ex: LabeledExample, spec: PerturbationSpec, lexicons: Sequence[Lexicon]):
    if spec.mode == CHAR:
        text, receipt = perturb_chars(ex.clean_text, spec, ex.id)
        return with_clean_text(ex, text, lexicons, CHAR_PERTURBED), receipt
    tokens, receipt = perturb_words(ex.tokens, spec, ex.id)
    return with_clean_text(ex, " ".join(tokens), lexicons, WORD_PERTURBED), receipt


def perturb_dataset(dataset: Dataset, spec: PerturbationSpec, lexicons: Sequence[Lexicon],
                    tag: str | None = None, select: set[int] | None = None):
    """Perturb the examples whose positions are in ``select`` (all when None).

    Returns the new dataset and the receipts of the perturbed examples.
    """
    examples = []
    receipts = []
    for i, ex in enumerate(dataset.examples):
        if select is None or i in select:
            ex, receipt = perturb_example(ex, spec, lexicons)
            receipts.append(receipt)
        examples.append(ex)
    return Dataset(dataset.schema, tuple(examples), tag or dataset.variant_tag), receipts


HALF, FULL = "half", "full"
_DEFENSE_TAGS = {(HALF, CHAR): TR_HALF_C, (HALF, WORD): TR_HALF_W, (FULL, CHAR): TR_FULL_C, (FULL, WORD): TR_FULL_W}
_STRATEGY_ALIASES = {"Tr": TR, "Tr½": HALF, "Tr¹": FULL, "half": HALF, "full": FULL, "TrHalf": HALF, "TrFull": FULL}


def build_defense_set(train: Dataset, strategy: str, spec: PerturbationSpec | None,
                      lexicons: Sequence[Lexicon]) -> Dataset:
    """Training set for one defense regime: ``Tr`` (copy), ``half`` or ``full``."""
    if train.variant_tag != TR:
        raise DatasetError(f"defense sets are built from a Tr dataset, got {train.variant_tag!r}")
    strategy = _STRATEGY_ALIASES.get(strategy, strategy)
    if strategy == TR:
        return train.tagged(TR)
    if strategy not in (HALF, FULL):
        raise ValueError(f"unknown defense strategy {strategy!r}")
    if spec is None:
        raise ValueError("perturbed defense sets need a perturbation spec")
    tag = _DEFENSE_TAGS[(strategy, spec.mode)]
    if strategy == FULL:
        return perturb_dataset(train, spec, lexicons, tag)[0]
    rng = np.random.default_rng(np.uint64((spec.seed ^ id_hash("half:" + spec.mode)) & _MASK64))
    n = len(train)
    select = set(int(i) for i in rng.choice(n, size=n // 2, replace=False)) if n else set()
    return perturb_dataset(train, spec, lexicons, tag, select)[0]


def build_attack_set(test: Dataset, tactic: str, spec: PerturbationSpec | None,
                     lexicons: Sequence[Lexicon]) -> Dataset:
    """Test set for one attack tactic: ``none``, ``char`` or ``word``."""
    if test.variant_tag != TE:
        raise DatasetError(f"attack sets are built from a Te dataset, got {test.variant_tag!r}")
    if tactic == "none":
        return test.tagged(TE)
    if tactic not in (CHAR, WORD):
        raise ValueError(f"unknown attack tactic {tactic!r}")
    if spec is None or spec.mode != tactic:
        raise ValueError(f"{tactic} attack needs a {tactic}-mode spec")
    return perturb_dataset(test, spec, lexicons, TE_C if tactic == CHAR else TE_W)[0]


MIXED_ID_SEPARATOR = "|"


def build_mixed_set(te: Dataset, te_c: Dataset, te_w: Dataset) -> Dataset:
    """Concatenate clean, char-attacked and word-attacked test sets."""
    ref = sorted(te.ids)
    for other in (te_c, te_w):
        if sorted(other.ids) != ref:
            raise DatasetError(f"{other.variant_tag} does not derive from the same Te (example ids differ)")
    examples = []
    for ds in (te, te_c, te_w):
        examples.extend(replace(e, id=f"{e.id}{MIXED_ID_SEPARATOR}{ds.variant_tag}") for e in ds.examples)
    return Dataset(te.schema, tuple(examples), TE_MIXED)
