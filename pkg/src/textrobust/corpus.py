"""Labelled documents, preprocessing, lexicon features and task schemas."""
from __future__ import annotations

import json
import string
import unicodedata
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DatasetError, ParseError

ORIGINAL = "original"
CHAR_PERTURBED = "char_perturbed"
WORD_PERTURBED = "word_perturbed"
PROVENANCES = (ORIGINAL, CHAR_PERTURBED, WORD_PERTURBED)

# Dataset variant tags. Human-facing aliases are accepted by ``canonical_tag``.
RAW = "raw"
TR, TR_HALF_C, TR_HALF_W, TR_FULL_C, TR_FULL_W = "Tr", "TrHalfC", "TrHalfW", "TrFullC", "TrFullW"
TE, TE_C, TE_W, TE_MIXED = "Te", "TeC", "TeW", "TeMixed"
VARIANT_TAGS = (RAW, TR, TR_HALF_C, TR_HALF_W, TR_FULL_C, TR_FULL_W, TE, TE_C, TE_W, TE_MIXED)

_ALIASES = {
    "Tr½C": TR_HALF_C, "Tr½W": TR_HALF_W, "Tr¹C": TR_FULL_C, "Tr¹W": TR_FULL_W,
    "Te′C": TE_C, "Te′W": TE_W, "Te'C": TE_C, "Te'W": TE_W, "Te-mixed": TE_MIXED,
}


def canonical_tag(tag: str) -> str:
    return _ALIASES.get(tag, tag)


@dataclass(frozen=True)
class TaskSchema:
    name: str
    classes: tuple[str, ...]
    binary_map: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes) or len(self.classes) < 2:
            raise ValueError("a schema needs at least two distinct classes")
        missing = [c for c in self.classes if self.binary_map and c not in self.binary_map]
        if missing:
            raise ValueError(f"binary_map does not cover classes {missing}")
        object.__setattr__(self, "binary_map", dict(self.binary_map))

    def __hash__(self):
        return hash((self.name, self.classes, tuple(sorted(self.binary_map.items()))))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def index(self, label: str) -> int:
        return self.classes.index(label)

    @property
    def has_binary(self) -> bool:
        return bool(self.binary_map)

    def binary_schema(self) -> "TaskSchema":
        if not self.binary_map:
            raise DatasetError(f"schema {self.name!r} has no binary collapse mapping")
        sides = tuple(dict.fromkeys(self.binary_map[c] for c in self.classes))
        if len(sides) == len(self.classes) and all(self.binary_map[c] == c for c in self.classes):
            return self
        name = self.name if self.name.endswith("_binary") else f"{self.name}_binary"
        return TaskSchema(name=name, classes=sides, binary_map={s: s for s in sides})

    def binary_index_map(self) -> np.ndarray:
        """Class index -> index in :meth:`binary_schema`."""
        b = self.binary_schema()
        return np.array([b.index(self.binary_map[c]) for c in self.classes], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"name": self.name, "classes": list(self.classes), "binary_map": dict(self.binary_map)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskSchema":
        return cls(name=d.get("name", "custom"), classes=tuple(d["classes"]), binary_map=dict(d.get("binary_map", {})))


THREE_WAY = TaskSchema(
    name="three_way",
    classes=("trustworthy", "propaganda", "disinformation"),
    binary_map={"trustworthy": "trustworthy", "propaganda": "deceptive", "disinformation": "deceptive"},
)
FOUR_WAY = TaskSchema(
    name="four_way",
    classes=("clickbait", "hoax", "satire", "conspiracy"),
    binary_map={"clickbait": "not_satire", "hoax": "not_satire", "satire": "satire", "conspiracy": "not_satire"},
)
SCHEMAS = {"three_way": THREE_WAY, "four_way": FOUR_WAY}


def schema_by_name(name: str) -> TaskSchema:
    try:
        return SCHEMAS[name]
    except KeyError:
        raise DatasetError(f"unknown task schema {name!r}; expected one of {sorted(SCHEMAS)}") from None


# ---------------------------------------------------------------------------
# preprocessing

_URL_PREFIXES = ("http://", "https://", "www.")
_ASCII_PUNCT = set(string.punctuation)


def _is_punct(ch: str) -> bool:
    return ch in _ASCII_PUNCT or unicodedata.category(ch).startswith("P")


def preprocess(raw_text: str) -> str:
    """Lowercase, drop mentions/hashtags/URLs, strip punctuation, squeeze whitespace."""
    kept = []
    for tok in raw_text.lower().split():
        if tok.startswith(("@", "#")) or tok.startswith(_URL_PREFIXES):
            continue
        tok = "".join(ch for ch in tok if not _is_punct(ch))
        if tok:
            kept.append(tok)
    # punctuation removal can expose whitespace-like characters inside a token
    return " ".join(" ".join(kept).split())


def tokenize(clean_text: str) -> tuple[str, ...]:
    return tuple(clean_text.split())


@dataclass(frozen=True)
class Lexicon:
    name: str
    tokens: frozenset[str]

    def __contains__(self, token: str) -> bool:
        return token in self.tokens


def load_lexicon(path: str | PathLike, name: str | None = None) -> Lexicon:
    path = Path(path)
    tokens = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            item = line.split("#", 1)[0].strip().lower()
            if item:
                tokens.add(item)
    return Lexicon(name=name or path.stem, tokens=frozenset(tokens))


def lexicon_features(tokens: Sequence[str], lexicons: Sequence[Lexicon]) -> tuple[float, ...]:
    """Fraction of tokens found in each lexicon."""
    if not lexicons:
        raise ValueError("at least one lexicon is required")
    n = max(1, len(tokens))
    return tuple(sum(1 for t in tokens if t in lex.tokens) / n for lex in lexicons)


# ---------------------------------------------------------------------------
# examples and datasets


@dataclass(frozen=True)
class LabeledExample:
    id: str
    raw_text: str
    clean_text: str
    tokens: tuple[str, ...]
    label: str
    lexicon_features: tuple[float, ...]
    aux_features: tuple[float, ...] | None = None
    provenance: str = ORIGINAL


def make_example(id: str, raw_text: str, label: str, lexicons: Sequence[Lexicon],
                 aux: Sequence[float] | None = None) -> LabeledExample:
    clean = preprocess(raw_text)
    tokens = tokenize(clean)
    return LabeledExample(
        id=id, raw_text=raw_text, clean_text=clean, tokens=tokens, label=label,
        lexicon_features=lexicon_features(tokens, lexicons),
        aux_features=None if aux is None else tuple(float(x) for x in aux),
    )


def with_clean_text(ex: LabeledExample, clean_text: str, lexicons: Sequence[Lexicon], provenance: str) -> LabeledExample:
    """Replace the cleaned text of an example and recompute its derived fields."""
    tokens = tokenize(clean_text)
    return replace(ex, clean_text=clean_text, tokens=tokens,
                   lexicon_features=lexicon_features(tokens, lexicons), provenance=provenance)


@dataclass(frozen=True)
class Dataset:
    schema: TaskSchema
    examples: tuple[LabeledExample, ...]
    variant_tag: str = RAW

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "variant_tag", canonical_tag(self.variant_tag))
        if self.variant_tag not in VARIANT_TAGS:
            raise DatasetError(f"unknown variant tag {self.variant_tag!r}")
        bad = [e.id for e in self.examples if e.label not in self.schema.classes]
        if bad:
            raise DatasetError(f"labels not in schema {self.schema.name!r} for ids {bad}")
        ids = [e.id for e in self.examples]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate example ids {dup}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.examples]

    def label_indices(self) -> np.ndarray:
        return np.array([self.schema.index(e.label) for e in self.examples], dtype=np.int64)

    def tagged(self, tag: str) -> "Dataset":
        return replace(self, variant_tag=tag)

    @property
    def aux_dim(self) -> int | None:
        if not self.examples or self.examples[0].aux_features is None:
            return None
        return len(self.examples[0].aux_features)


def read_records(path: str | PathLike) -> list[dict]:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON record: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record must be a JSON object", path, lineno)
            for key in ("id", "text", "label"):
                if key not in rec:
                    raise ParseError(f"record is missing {key!r}", path, lineno)
            out.append(rec)
    return out


def load_corpus(path: str | PathLike, schema: TaskSchema, lexicons: Sequence[Lexicon]) -> Dataset:
    """Read a JSON-lines corpus into a :class:`Dataset`.

    Records carry ``id``, ``text``, ``label`` and optionally ``aux`` (numbers).
    Records written by the perturbation command also carry ``provenance`` and
    ``raw_text``; their ``text`` is taken as already preprocessed.
    """
    records = read_records(path)
    unknown = [str(r["id"]) for r in records if r["label"] not in schema.classes]
    if unknown:
        raise DatasetError(f"{path}: labels outside schema {schema.name!r} for ids {unknown}")
    with_aux = [r for r in records if r.get("aux") is not None]
    if with_aux and len(with_aux) != len(records):
        missing = [str(r["id"]) for r in records if r.get("aux") is None]
        raise DatasetError(f"{path}: aux features must be present for all records or none; missing for {missing}")
    if with_aux and len({len(r["aux"]) for r in records}) != 1:
        raise DatasetError(f"{path}: aux feature vectors have inconsistent lengths")
    examples = []
    for r in records:
        prov = r.get("provenance", ORIGINAL)
        if prov not in PROVENANCES:
            raise DatasetError(f"{path}: unknown provenance {prov!r} for id {r['id']}")
        ex = make_example(str(r["id"]), r["text"], r["label"], lexicons, r.get("aux"))
        if prov != ORIGINAL:
            ex = with_clean_text(replace(ex, raw_text=r.get("raw_text", r["text"])), r["text"], lexicons, prov)
        examples.append(ex)
    return Dataset(schema=schema, examples=tuple(examples), variant_tag=RAW)


def example_record(ex: LabeledExample) -> dict:
    rec = {"id": ex.id}
    if ex.provenance == ORIGINAL:
        rec["text"] = ex.raw_text
    else:
        rec["text"] = ex.clean_text
        rec["raw_text"] = ex.raw_text
        rec["provenance"] = ex.provenance
    rec["label"] = ex.label
    if ex.aux_features is not None:
        rec["aux"] = list(ex.aux_features)
    return rec


def write_corpus(dataset: Iterable[LabeledExample], path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps(example_record(ex), ensure_ascii=False) + "\n")


def collapse(dataset: Dataset) -> Dataset:
    """Relabel every example through the schema's binary mapping."""
    binary = dataset.schema.binary_schema()
    if binary is dataset.schema:
        return dataset
    bmap = dataset.schema.binary_map
    examples = tuple(replace(e, label=bmap[e.label]) for e in dataset.examples)
    return Dataset(schema=binary, examples=examples, variant_tag=dataset.variant_tag)


def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    labels = [e.label for e in dataset.examples]
    test_idx = []
    for cls in dataset.schema.classes:
        members = [i for i, lab in enumerate(labels) if lab == cls]
        if not members:
            continue
        if len(members) < 2:
            raise DatasetError(f"class {cls!r} has fewer than 2 examples; cannot split")
        n_test = min(max(int(round(test_fraction * len(members))), 1), len(members) - 1)
        chosen = rng.permutation(len(members))[:n_test]
        test_idx.extend(members[i] for i in chosen)
    test_set = set(test_idx)
    train = tuple(e for i, e in enumerate(dataset.examples) if i not in test_set)
    test = tuple(e for i, e in enumerate(dataset.examples) if i in test_set)
    return (Dataset(dataset.schema, train, TR), Dataset(dataset.schema, test, TE))
