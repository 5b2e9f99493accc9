"""Defense x attack evaluation grid and its report bundle."""
from __future__ import annotations

import csv
import io
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from os import PathLike
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from ._accel import backend
from .confusables import ConfusablesTable
from .corpus import (
    TE, TE_C, TE_MIXED, TE_W, TR, TR_FULL_C, TR_FULL_W, TR_HALF_C, TR_HALF_W, Dataset, Lexicon, TaskSchema,
    canonical_tag,
)
from .embeddings import EmbeddingStore, NeighborIndex
from .errors import ConfigError, TrainingDivergedError, UndefinedBaselineError
from .metrics import (
    DEFAULT_BINS, DEFAULT_THRESHOLD, confidence_histogram, error_rate, f1_scores, high_confidence_split,
    high_impact_scores, relative_difference,
)
from .model import ENS_C, ENS_CW, ENS_W, EnsembleModel, TrainConfig, featurize_dataset, layout_for, train_arrays
from .perturb import (
    CHAR, FULL, HALF, MIXED_ID_SEPARATOR, WORD, PerturbationSpec, build_attack_set, build_defense_set, build_mixed_set,
    id_hash,
)

log = logging.getLogger(__name__)

SINGLE_DEFENSES = (TR, TR_HALF_C, TR_HALF_W, TR_FULL_C, TR_FULL_W)
ENSEMBLES = {
    ENS_C: (TR, TR_HALF_C, TR_FULL_C),
    ENS_W: (TR, TR_HALF_W, TR_FULL_W),
    ENS_CW: (TR, TR_HALF_C, TR_FULL_C, TR_HALF_W, TR_FULL_W),
}
ALL_DEFENSES = SINGLE_DEFENSES + tuple(ENSEMBLES)
ALL_ATTACKS = (TE, TE_C, TE_W, TE_MIXED)

_DEFENSE_RECIPES = {
    TR_HALF_C: (HALF, CHAR), TR_HALF_W: (HALF, WORD), TR_FULL_C: (FULL, CHAR), TR_FULL_W: (FULL, WORD),
}
_DEFENSE_ALIASES = {"Ens_C": ENS_C, "Ens_W": ENS_W, "Ens_CW": ENS_CW}


def canonical_defense(name: str) -> str:
    return _DEFENSE_ALIASES.get(name, canonical_tag(name))


@dataclass(frozen=True)
class GridConfig:
    schema: TaskSchema
    defenses: tuple[str, ...] = ALL_DEFENSES
    attacks: tuple[str, ...] = ALL_ATTACKS
    char_rate: float = 0.25
    word_rate: float = 0.25
    neighbor_rank: int = 1
    threshold: float = DEFAULT_THRESHOLD
    histogram_bins: int = DEFAULT_BINS
    defense_seed: int = 1
    attack_seed: int = 2
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        object.__setattr__(self, "defenses", tuple(canonical_defense(d) for d in self.defenses))
        object.__setattr__(self, "attacks", tuple(canonical_tag(a) for a in self.attacks))
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"confidence threshold must lie in (0, 1), got {self.threshold}")
        if self.histogram_bins < 2:
            raise ConfigError("histogram_bins must be at least 2")
        for rate, name in ((self.char_rate, "char_rate"), (self.word_rate, "word_rate")):
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {rate}")
        if not self.defenses or not self.attacks:
            raise ConfigError("at least one defense and one attack are required")
        unknown = [d for d in self.defenses if d not in ALL_DEFENSES]
        if unknown:
            raise ConfigError(f"unknown defenses {unknown}; expected a subset of {list(ALL_DEFENSES)}")
        unknown = [a for a in self.attacks if a not in ALL_ATTACKS]
        if unknown:
            raise ConfigError(f"unknown attacks {unknown}; expected a subset of {list(ALL_ATTACKS)}")
        if len(set(self.defenses)) != len(self.defenses) or len(set(self.attacks)) != len(self.attacks):
            raise ConfigError("defenses and attacks must not repeat")
        for ens in self.defenses:
            missing = [m for m in ENSEMBLES.get(ens, ()) if m not in self.defenses]
            if missing:
                raise ConfigError(f"{ens} requires member defenses {missing} in the grid")

    @property
    def needs_char(self) -> bool:
        return any(d in (TR_HALF_C, TR_FULL_C) for d in self.defenses) or any(a in (TE_C, TE_MIXED) for a in self.attacks)

    @property
    def needs_word(self) -> bool:
        return any(d in (TR_HALF_W, TR_FULL_W) for d in self.defenses) or any(a in (TE_W, TE_MIXED) for a in self.attacks)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = self.schema.to_dict()
        d["defenses"] = list(self.defenses)
        d["attacks"] = list(self.attacks)
        return d


@dataclass
class CellResult:
    defense: str
    attack: str
    n: int
    errors: int
    error_rate: float
    relative_diff: float | None
    multiclass_f1: float
    binary_f1: float | None
    binary_error_rate: float | None
    high_conf_errors: int
    low_conf_errors: int
    high_conf_error_rate: float
    low_conf_error_rate: float
    confidence_histogram: list[int]
    subsets: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GridResult:
    config: GridConfig
    cells: list[CellResult]
    dataset_sizes: dict[str, int]
    word_attack_names: list[str]

    def cell(self, defense: str, attack: str) -> CellResult:
        for c in self.cells:
            if c.defense == defense and c.attack == attack:
                return c
        raise KeyError((defense, attack))


def predict_dataset(model, dataset: Dataset, store: EmbeddingStore, X: np.ndarray | None = None):
    """Predicted class indices and confidences for every example."""
    if X is None:
        X = featurize_dataset(dataset, store, getattr(model, "layout", None))
    if isinstance(model, EnsembleModel):
        labels, _, conf = model.vote(X)
        return labels, conf
    probs = model.predict_proba(X)
    return probs.argmax(axis=1), probs.max(axis=1)


def evaluate_cell(defense: str, attack: str, labels: np.ndarray, confidences: np.ndarray, truth: np.ndarray,
                  schema: TaskSchema, threshold: float, bins: int, baseline_error: float | None,
                  subset_of: Sequence[str] | None = None) -> CellResult:
    n = truth.shape[0]
    err = error_rate(labels, truth)
    split = high_confidence_split(labels, truth, confidences, threshold)
    try:
        rel = relative_difference(err, baseline_error) if baseline_error is not None else None
    except UndefinedBaselineError:
        rel = None
    if schema.has_binary:
        impact = high_impact_scores(labels, truth, schema)
        bf1, berr = impact.binary_f1, impact.binary_error
    else:
        bf1 = berr = None
    subsets = {}
    if subset_of is not None:
        tags = np.asarray(subset_of)
        for tag in dict.fromkeys(subset_of):
            sel = tags == tag
            subsets[tag] = error_rate(labels[sel], truth[sel])
    return CellResult(
        defense=defense, attack=attack, n=n, errors=int(np.count_nonzero(labels != truth)), error_rate=err,
        relative_diff=rel, multiclass_f1=f1_scores(labels, truth, schema).macro_f1, binary_f1=bf1,
        binary_error_rate=berr, high_conf_errors=split.high_conf_errors, low_conf_errors=split.low_conf_errors,
        high_conf_error_rate=split.high_conf_errors / n, low_conf_error_rate=split.low_conf_errors / n,
        confidence_histogram=confidence_histogram(confidences, bins).tolist(), subsets=subsets,
    )


def attack_names(config: GridConfig, word_names: Sequence[str]) -> list[tuple[str, str, str | None]]:
    """Expand attacks into (cell name, base attack, word store name)."""
    out = []
    for a in config.attacks:
        if a in (TE_W, TE_MIXED) and len(word_names) > 1:
            out.extend((f"{a}@{w}", a, w) for w in word_names)
        elif a in (TE_W, TE_MIXED):
            out.append((a, a, word_names[0]))
        else:
            out.append((a, a, None))
    return out


def planned_cells(config: GridConfig, word_names: Sequence[str] = ("default",)) -> list[tuple[str, str]]:
    return [(d, name) for d in config.defenses for name, _, _ in attack_names(config, word_names)]


def run_grid(
    config: GridConfig,
    train: Dataset,
    test: Dataset,
    model_store: EmbeddingStore,
    lexicons: Sequence[Lexicon],
    table: ConfusablesTable | None = None,
    word_indices: Mapping[str, NeighborIndex] | None = None,
) -> GridResult:
    """Build every defense and attack set, train every model and score every cell.

    ``word_indices`` maps a name to the neighbour index of one attack-time
    embedding space; the first entry also perturbs the word-level defenses.
    """
    config.validate()
    if train.schema != config.schema or test.schema != config.schema:
        raise ConfigError("train/test datasets do not use the configured schema")
    word_indices = dict(word_indices or {})
    if config.needs_char and table is None:
        raise ConfigError("character-level defenses or attacks need a confusables table")
    if config.needs_word and not word_indices:
        raise ConfigError("word-level defenses or attacks need at least one neighbour index")
    word_names = list(word_indices) or ["default"]
    train = train.tagged(TR)
    test = test.tagged(TE)

    def spec(mode: str, seed: int, index: NeighborIndex | None = None) -> PerturbationSpec:
        if mode == CHAR:
            return PerturbationSpec(CHAR, config.char_rate, seed, table=table)
        return PerturbationSpec(WORD, config.word_rate, seed, index=index, neighbor_rank=config.neighbor_rank)

    defense_word_index = word_indices[word_names[0]] if word_indices else None
    sizes: dict[str, int] = {}

    # 1. defense models
    layout = layout_for(train, model_store)
    members_needed = [d for d in SINGLE_DEFENSES
                      if d in config.defenses or any(d in ENSEMBLES[e] for e in config.defenses if e in ENSEMBLES)]
    models = {}
    for d in members_needed:
        if d == TR:
            ds = build_defense_set(train, TR, None, lexicons)
        else:
            strategy, mode = _DEFENSE_RECIPES[d]
            ds = build_defense_set(train, strategy, spec(mode, config.defense_seed, defense_word_index), lexicons)
        sizes[d] = len(ds)
        X = featurize_dataset(ds, model_store, layout)
        cfg = TrainConfig(**{**asdict(config.train), "seed": (config.train.seed ^ id_hash(d)) & 0xFFFFFFFF})
        log.info("training %s on %d examples", d, len(ds))
        try:
            models[d] = train_arrays(X, ds.label_indices(), config.schema, layout, cfg)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"defense {d}: {exc}") from exc
    for e in config.defenses:
        if e in ENSEMBLES:
            models[e] = EnsembleModel([models[m] for m in ENSEMBLES[e]], tag=e)

    # 2. attack sets
    te = build_attack_set(test, "none", None, lexicons)
    te_c = build_attack_set(test, CHAR, spec(CHAR, config.attack_seed), lexicons) if config.needs_char else None
    te_w = {w: build_attack_set(test, WORD, spec(WORD, config.attack_seed, word_indices[w]), lexicons)
            for w in word_indices} if config.needs_word else {}
    sets: dict[str, tuple[Dataset, list[str] | None]] = {}
    for name, base, w in attack_names(config, word_names):
        if base == TE:
            sets[name] = (te, None)
        elif base == TE_C:
            sets[name] = (te_c, None)
        elif base == TE_W:
            sets[name] = (te_w[w], None)
        else:
            mixed = build_mixed_set(te, te_c, te_w[w])
            sets[name] = (mixed, [e.id.rsplit(MIXED_ID_SEPARATOR, 1)[1] for e in mixed.examples])
    for name, (ds, _) in sets.items():
        sizes[name] = len(ds)
    features = {name: featurize_dataset(ds, model_store, layout) for name, (ds, _) in sets.items()}
    te_features = features.get(TE)
    if te_features is None:
        te_features = featurize_dataset(te, model_store, layout)

    # 3. cells
    cells = []
    truth_te = te.label_indices()
    for d in config.defenses:
        model = models[d]
        te_labels, _ = predict_dataset(model, te, model_store, te_features)
        baseline = error_rate(te_labels, truth_te)
        for name, (ds, subset_of) in sets.items():
            labels, conf = predict_dataset(model, ds, model_store, features[name])
            cells.append(evaluate_cell(d, name, labels, conf, ds.label_indices(), config.schema,
                                       config.threshold, config.histogram_bins, baseline, subset_of))
    return GridResult(config=config, cells=cells, dataset_sizes=sizes, word_attack_names=list(word_indices))


# ---------------------------------------------------------------------------
# report bundle


def fmt(x) -> str:
    if x is None:
        return "undefined"
    return f"{x:.6f}"


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def render_reports(cells: Sequence[Mapping], bins: int) -> dict[str, str]:
    """CSV report texts keyed by file name, from cell dictionaries."""
    defenses = list(dict.fromkeys(c["defense"] for c in cells))
    attacks = list(dict.fromkeys(c["attack"] for c in cells))
    by_key = {(c["defense"], c["attack"]): c for c in cells}

    header = ["defense"]
    for a in attacks:
        header += [f"{a}_error_rate", f"{a}_relative_diff"]
    table1 = [header]
    for d in defenses:
        row = [d]
        for a in attacks:
            c = by_key.get((d, a))
            row += [fmt(c["error_rate"]), fmt(c["relative_diff"])] if c else ["", ""]
        table1.append(row)

    fig5 = [["defense", "attack", "n", "errors", "high_conf_errors", "low_conf_errors", "error_rate",
             "high_conf_error_rate", "low_conf_error_rate"]]
    fig6 = [["defense", "attack", "multiclass_f1", "binary_f1", "multiclass_error_rate", "binary_error_rate"]]
    fig4 = [["defense", "attack", "bin", "bin_lo", "bin_hi", "count"]]
    for c in cells:
        fig5.append([c["defense"], c["attack"], c["n"], c["errors"], c["high_conf_errors"], c["low_conf_errors"],
                     fmt(c["error_rate"]), fmt(c["high_conf_error_rate"]), fmt(c["low_conf_error_rate"])])
        fig6.append([c["defense"], c["attack"], fmt(c["multiclass_f1"]), fmt(c["binary_f1"]),
                     fmt(c["error_rate"]), fmt(c["binary_error_rate"])])
        for b, count in enumerate(c["confidence_histogram"]):
            fig4.append([c["defense"], c["attack"], b, fmt(b / bins), fmt((b + 1) / bins), count])
    return {
        "table1.csv": _csv(table1),
        "fig5_highconf.csv": _csv(fig5),
        "fig6_impact.csv": _csv(fig6),
        "fig4_confidence.csv": _csv(fig4),
    }


def run_document(result: GridResult, run_config: Mapping | None = None, seeds: Mapping | None = None,
                 timestamp: str | None = None) -> dict:
    return {
        "format": "textrobust.run/1",
        "timestamp": timestamp,
        "versions": {"textrobust": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "backend": backend()},
        "seeds": dict(seeds or {}),
        "config": dict(run_config or {}),
        "grid": result.config.to_dict(),
        "dataset_sizes": result.dataset_sizes,
        "word_attack_embeddings": result.word_attack_names,
        "cells": [c.to_dict() for c in result.cells],
    }


def dump_run_json(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_bundle(doc: Mapping, out_dir: str | PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(dump_run_json(doc), encoding="utf-8")
    for name, text in render_reports(doc["cells"], doc["grid"]["histogram_bins"]).items():
        (out / name).write_text(text, encoding="utf-8")
