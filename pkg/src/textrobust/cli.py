"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.
Global flags may also be given through ``TEXTROBUST_<FLAG>`` environment
variables (``TEXTROBUST_SEED``, ``TEXTROBUST_OUT``, ...); flags win over the
environment, which wins over the config file.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .confusables import load_confusables, load_exclusions
from .corpus import SCHEMAS, TaskSchema, load_corpus, load_lexicon, schema_by_name, stratified_split, write_corpus
from .embeddings import (
    DEFAULT_LEAF_SIZE, DEFAULT_N_TREES, build_index, load_embeddings, load_index, recall_at_1, save_index,
)
from .errors import ConfigError, TextRobustError, TrainingDivergedError
from .harness import GridConfig, dump_run_json, planned_cells, render_reports, run_document, run_grid, write_bundle
from .model import TrainConfig
from .perturb import CHAR, WORD, PerturbationSpec, perturb_dataset
from .synthetic import SyntheticSpec, write_fixture

log = logging.getLogger("textrobust")

ENV_PREFIX = "TEXTROBUST_"
EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    """Invalid command-line input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    schema: TaskSchema
    corpus: Path
    embeddings: Path
    word_attack_embeddings: dict[str, Path]
    confusables: Path | None
    confusable_exclusions: Path | None
    lexicons: list[Path]
    output: Path
    seed: int
    test_fraction: float
    grid: dict
    perturbation: dict
    index: dict
    train: dict
    source: dict = field(default_factory=dict)

    @property
    def seeds(self) -> dict[str, int]:
        b = self.seed
        return {"base": b, "split": b, "defense_perturbation": b + 1, "attack_perturbation": b + 2,
                "index": b + 3, "train": b + 4}

    def validate_paths(self) -> None:
        paths = [("corpus", self.corpus), ("embeddings", self.embeddings)]
        paths += [(f"word_attack_embeddings.{k}", p) for k, p in self.word_attack_embeddings.items()]
        paths += [(f"lexicons[{i}]", p) for i, p in enumerate(self.lexicons)]
        if self.confusables is not None:
            paths.append(("confusables", self.confusables))
        if self.confusable_exclusions is not None:
            paths.append(("confusable_exclusions", self.confusable_exclusions))
        missing = [f"{name}: {p}" for name, p in paths if not p.is_file()]
        if missing:
            raise ConfigError("missing input files: " + "; ".join(missing))
        if not self.lexicons:
            raise ConfigError("at least one lexicon file is required")

    def grid_config(self) -> GridConfig:
        pert = self.perturbation
        s = self.seeds
        train = TrainConfig(**{**self.train, "seed": s["train"]})
        return GridConfig(
            schema=self.schema,
            defenses=tuple(self.grid.get("defenses", GridConfig.__dataclass_fields__["defenses"].default)),
            attacks=tuple(self.grid.get("attacks", GridConfig.__dataclass_fields__["attacks"].default)),
            char_rate=float(pert.get("char_rate", 0.25)),
            word_rate=float(pert.get("word_rate", 0.25)),
            neighbor_rank=int(pert.get("neighbor_rank", 1)),
            threshold=float(self.grid.get("threshold", 0.9)),
            histogram_bins=int(self.grid.get("histogram_bins", 20)),
            defense_seed=s["defense_perturbation"],
            attack_seed=s["attack_perturbation"],
            train=train,
        )


def _schema_from(value) -> TaskSchema:
    if isinstance(value, str):
        return schema_by_name(value)
    if isinstance(value, dict):
        return TaskSchema.from_dict(value)
    raise ConfigError("'task' must be a schema name or an object with 'classes'")


def load_run_config(path: str | os.PathLike, seed: int | None = None, out: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p).resolve()

    paths = doc.get("paths", {})
    for key in ("corpus", "embeddings"):
        if key not in paths:
            raise ConfigError(f"config is missing paths.{key}")
    wae = paths.get("word_attack_embeddings") or {"default": paths["embeddings"]}
    if isinstance(wae, str):
        wae = {"default": wae}
    try:
        cfg = RunConfig(
            schema=_schema_from(doc.get("task", "three_way")),
            corpus=resolve(paths["corpus"]),
            embeddings=resolve(paths["embeddings"]),
            word_attack_embeddings={k: resolve(v) for k, v in wae.items()},
            confusables=resolve(paths.get("confusables")),
            confusable_exclusions=resolve(paths.get("confusable_exclusions")),
            lexicons=[resolve(p) for p in paths.get("lexicons", [])],
            output=Path(out).resolve() if out else resolve(paths.get("output", "out")),
            seed=int(seed if seed is not None else doc.get("seed", 0)),
            test_fraction=float(doc.get("split", {}).get("test_fraction", 0.2)),
            grid=dict(doc.get("grid", {})),
            perturbation=dict(doc.get("perturbation", {})),
            index=dict(doc.get("index", {})),
            train=dict(doc.get("train", {})),
            source=doc,
        )
        cfg.grid_config()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    return cfg


# ---------------------------------------------------------------------------
# output handling


class _OutputLock:
    def __init__(self, target: Path):
        self.path = target.parent / f".{target.name}.lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output {self.path.parent} is locked by another run ({self.path})") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _replace_dir(tmp: Path, target: Path) -> None:
    old = None
    if target.exists():
        old = target.parent / f".{target.name}.old-{os.getpid()}"
        os.replace(target, old)
    os.replace(tmp, target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def write_bundle_atomic(doc: dict, out_dir: Path) -> None:
    tmp = out_dir.parent / f".{out_dir.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        write_bundle(doc, tmp)
        _replace_dir(tmp, out_dir)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def _write_file_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp-{os.getpid()}"
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# subcommands


def _load_lexicons(paths):
    if not paths:
        raise UsageError("at least one --lexicon is required")
    return [load_lexicon(p) for p in paths]


def cmd_perturb(args) -> int:
    if not 0.0 <= args.rate <= 1.0:
        raise UsageError(f"--rate must lie in [0, 1], got {args.rate}")
    if args.neighbor_rank < 1:
        raise UsageError("--neighbor-rank must be positive")
    out = args.out
    if not out:
        raise UsageError("--out is required for perturb")
    schema = schema_by_name(args.task)
    lexicons = _load_lexicons(args.lexicon)
    dataset = load_corpus(args.corpus, schema, lexicons)
    seed = args.seed if args.seed is not None else 0
    if args.mode == CHAR:
        exclude = load_exclusions(args.exclude) if args.exclude else ()
        spec = PerturbationSpec(CHAR, args.rate, seed, table=load_confusables(args.confusables, exclude))
    else:
        if not args.embeddings:
            raise UsageError("--embeddings is required for --mode word")
        store = load_embeddings(args.embeddings)
        if args.index:
            index = load_index(args.index, store)
        else:
            index = build_index(store, args.n_trees, args.leaf_size, seed=seed)
        spec = PerturbationSpec(WORD, args.rate, seed, index=index, neighbor_rank=args.neighbor_rank)
    if args.dry_run:
        print(f"would perturb {len(dataset)} examples ({args.mode}, rate={args.rate}, seed={seed}) -> {out}")
        return EXIT_OK
    perturbed, receipts = perturb_dataset(dataset, spec, lexicons)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.tmp-{os.getpid()}"
    write_corpus(perturbed, tmp)
    os.replace(tmp, out)
    receipts_path = Path(args.receipts) if args.receipts else out.with_name(out.stem + ".receipts.jsonl")
    _write_file_atomic(receipts_path, "".join(
        json.dumps(r.to_record(args.mode), ensure_ascii=False) + "\n" for r in receipts))
    touched = sum(1 for r in receipts if r.positions_changed)
    mean_changed = float(np.mean([len(r.positions_changed) for r in receipts])) if receipts else 0.0
    print(f"perturbed {touched}/{len(receipts)} examples; mean positions changed {mean_changed:.3f}")
    print(f"wrote {out} and {receipts_path}")
    return EXIT_OK


def cmd_index(args) -> int:
    store = load_embeddings(args.embeddings)
    seed = args.seed if args.seed is not None else 0
    if args.verify:
        index = load_index(args.verify, store)
        print(f"{args.verify}: checksum matches {args.embeddings} ({index.n_trees} trees, {index.n_nodes} nodes)")
    else:
        if args.n_trees < 1 or args.leaf_size < 1:
            raise UsageError("--n-trees and --leaf-size must be positive")
        if args.dry_run:
            print(f"would index {len(store)} vectors (dim {store.dim}) with {args.n_trees} trees -> {args.out}")
            return EXIT_OK
        index = build_index(store, args.n_trees, args.leaf_size, seed=seed)
        if args.out:
            out = Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            tmp = out.parent / f".{out.name}.tmp-{os.getpid()}"
            save_index(index, tmp)
            os.replace(tmp, out)
            print(f"wrote {out} (store checksum {index.store_checksum[:16]}...)")
    if args.check > 0:
        rng = np.random.default_rng(seed)
        n = min(args.check, len(store))
        sample = [store.vocab[i] for i in rng.choice(len(store), size=n, replace=False)]
        print(f"recall@1 vs brute force on {n} sampled tokens: {recall_at_1(index, sample):.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    config_path = args.config
    if not config_path:
        raise UsageError("--config is required for run")
    cfg = load_run_config(config_path, seed=args.seed, out=args.out)
    cfg.validate_paths()
    grid = cfg.grid_config()
    word_names = list(cfg.word_attack_embeddings)
    if args.dry_run:
        cells = planned_cells(grid, word_names)
        print(f"planned {len(cells)} cells -> {cfg.output}")
        for d, a in cells:
            print(f"  {d} x {a}")
        return EXIT_OK
    seeds = cfg.seeds
    lexicons = [load_lexicon(p) for p in cfg.lexicons]
    exclude = load_exclusions(cfg.confusable_exclusions) if cfg.confusable_exclusions else ()
    table = load_confusables(cfg.confusables, exclude) if grid.needs_char else None
    model_store = load_embeddings(cfg.embeddings)
    word_indices = {}
    if grid.needs_word:
        for name, p in cfg.word_attack_embeddings.items():
            store = model_store if p == cfg.embeddings else load_embeddings(p)
            word_indices[name] = build_index(store, int(cfg.index.get("n_trees", DEFAULT_N_TREES)),
                                             int(cfg.index.get("leaf_size", DEFAULT_LEAF_SIZE)), seed=seeds["index"])
    dataset = load_corpus(cfg.corpus, cfg.schema, lexicons)
    train, test = stratified_split(dataset, cfg.test_fraction, seeds["split"])
    with _OutputLock(cfg.output):
        result = run_grid(grid, train, test, model_store, lexicons, table, word_indices)
        echo = {
            "config_file": str(Path(config_path)),
            "source": cfg.source,
            "resolved_seed": cfg.seed,
            "word_attack_embeddings": {k: Path(v).name for k, v in cfg.word_attack_embeddings.items()},
            "confusables": "bundled" if cfg.confusables is None else cfg.confusables.name,
        }
        doc = run_document(result, echo, seeds, timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"))
        write_bundle_atomic(doc, cfg.output)
    print(f"wrote {len(result.cells)} cells to {cfg.output}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_path = Path(args.run) if args.run else (Path(args.out) / "run.json" if args.out else None)
    if run_path is None:
        raise UsageError("report needs --run PATH (or --out DIR containing run.json)")
    try:
        doc = json.loads(run_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"run file not found: {run_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{run_path}: invalid JSON ({exc.msg})") from None
    if "cells" not in doc or "grid" not in doc:
        raise ConfigError(f"{run_path} is not a run.json bundle")
    out = Path(args.out) if args.out else run_path.parent
    reports = render_reports(doc["cells"], doc["grid"]["histogram_bins"])
    if args.dry_run:
        print("would write " + ", ".join(str(out / n) for n in reports))
        return EXIT_OK
    for name, text in reports.items():
        _write_file_atomic(out / name, text)
    print(f"rendered {len(reports)} reports into {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if not args.out:
        raise UsageError("--out is required for synth")
    spec = SyntheticSpec(n_docs=args.n_docs, seed=args.seed if args.seed is not None else SyntheticSpec.seed)
    if args.dry_run:
        print(f"would write a {spec.n_docs}-document fixture into {args.out}")
        return EXIT_OK
    out = write_fixture(args.out, spec)
    print(f"wrote synthetic fixture to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed")
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    p.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS, help="plan only, write nothing")
    p.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS, help="more logging")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="textrobust", parents=[common],
                                     description="Adversarial robustness evaluation for text classifiers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", parents=[common], help="perturb a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--task", default="three_way", choices=sorted(SCHEMAS))
    p.add_argument("--mode", required=True, choices=[CHAR, WORD])
    p.add_argument("--rate", type=float, default=0.25)
    p.add_argument("--lexicon", action="append", default=[], help="lexicon file (repeatable)")
    p.add_argument("--confusables", default=None, help="confusables file (default: bundled Unicode table)")
    p.add_argument("--exclude", default=None, help="characters never used as or replaced by confusables")
    p.add_argument("--embeddings", default=None, help="attack-time word vectors (word mode)")
    p.add_argument("--index", default=None, help="prebuilt index for --embeddings")
    p.add_argument("--n-trees", type=int, default=DEFAULT_N_TREES)
    p.add_argument("--leaf-size", type=int, default=DEFAULT_LEAF_SIZE)
    p.add_argument("--neighbor-rank", type=int, default=1)
    p.add_argument("--receipts", default=None, help="receipts output (default: <out>.receipts.jsonl)")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("index", parents=[common], help="build or verify a nearest-neighbour index")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--n-trees", type=int, default=DEFAULT_N_TREES)
    p.add_argument("--leaf-size", type=int, default=DEFAULT_LEAF_SIZE)
    p.add_argument("--check", type=int, default=200, help="tokens sampled for the recall spot check (0 = skip)")
    p.add_argument("--verify", default=None, help="load this index against --embeddings instead of building")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", parents=[common], help="run the defense x attack grid")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="re-render CSV reports from run.json")
    p.add_argument("--run", default=None, help="path to run.json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic fixture")
    p.add_argument("--n-docs", type=int, default=2000)
    p.set_defaults(func=cmd_synth)
    return parser


def _apply_env(args: argparse.Namespace) -> None:
    env = os.environ
    if not hasattr(args, "seed"):
        raw = env.get(ENV_PREFIX + "SEED")
        args.seed = int(raw) if raw not in (None, "") else None
    if not hasattr(args, "config"):
        args.config = env.get(ENV_PREFIX + "CONFIG") or None
    if not hasattr(args, "out"):
        args.out = env.get(ENV_PREFIX + "OUT") or None
    if not hasattr(args, "dry_run"):
        args.dry_run = env.get(ENV_PREFIX + "DRY_RUN", "").lower() in {"1", "true", "yes"}
    if not hasattr(args, "verbose"):
        raw = env.get(ENV_PREFIX + "VERBOSE", "")
        args.verbose = int(raw) if raw.isdigit() else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_env(args)
    except ValueError as exc:
        print(f"error: bad {ENV_PREFIX}SEED value: {exc}", file=sys.stderr)
        return EXIT_INVALID
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, ConfigError, TextRobustError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
