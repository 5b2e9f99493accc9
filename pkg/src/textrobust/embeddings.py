"""Word-vector storage and nearest-neighbour search.

Vectors are searched under angular distance ``1 - cos(u, v)``. The approximate
index is a forest of random-hyperplane trees queried best-first across all
trees (the scheme popularised by Annoy); candidates are then re-ranked exactly.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import IndexMismatchError, OOVError, ParseError

log = logging.getLogger(__name__)

DEFAULT_N_TREES = 16
DEFAULT_LEAF_SIZE = 32
_SEARCH_K_PER_TREE_LEAF = 6


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    dim: int
    vocab: tuple[str, ...]
    vectors: np.ndarray
    duplicate_count: int = 0
    token_index: dict[str, int] = field(init=False, repr=False)
    unit: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape != (len(self.vocab), self.dim):
            raise ValueError(f"vectors shape {vectors.shape} does not match ({len(self.vocab)}, {self.dim})")
        index = {tok: i for i, tok in enumerate(self.vocab)}
        if len(index) != len(self.vocab):
            raise ValueError("vocabulary tokens must be unique")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            bad = self.vocab[int(np.flatnonzero(norms == 0)[0])]
            raise ValueError(f"all-zero vector for token {bad!r}")
        unit = vectors / norms[:, None]
        vectors.setflags(write=False)
        unit.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "token_index", index)
        object.__setattr__(self, "unit", unit)

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token: str) -> bool:
        return token in self.token_index

    def row(self, token: str) -> int:
        try:
            return self.token_index[token]
        except KeyError:
            raise OOVError(f"token {token!r} not in vocabulary") from None

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.row(token)]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.dim).encode())
        for tok in self.vocab:
            h.update(tok.encode("utf-8"))
            h.update(b"\0")
        h.update(self.vectors.astype("<f8").tobytes())
        return h.hexdigest()


def load_embeddings(path: str | PathLike, expected_dim: int | None = None) -> EmbeddingStore:
    """Parse a whitespace-separated word-vector file (no header line)."""
    path = Path(path)
    vocab: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    duplicates = 0
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, fields = parts[0], parts[1:]
            if dim is None:
                if not fields:
                    raise ParseError("line has no vector components", path, lineno)
                dim = len(fields)
            if len(fields) != dim:
                raise ParseError(f"dimension mismatch: expected {dim}, got {len(fields)}", path, lineno)
            try:
                values = [float(x) for x in fields]
            except ValueError as exc:
                raise ParseError(f"bad number: {exc}", path, lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite vector component", path, lineno)
            if not any(values):
                raise ParseError(f"all-zero vector for token {token!r}", path, lineno)
            if token in seen:
                duplicates += 1
                continue
            seen.add(token)
            vocab.append(token)
            rows.append(values)
    if not vocab:
        raise ParseError("empty embedding file", path)
    if duplicates:
        log.warning("%s: %d duplicate token line(s) ignored (first occurrence kept)", path, duplicates)
    return EmbeddingStore(dim=dim, vocab=tuple(vocab), vectors=np.array(rows, dtype=np.float64),
                          duplicate_count=duplicates)


def save_embeddings(store: EmbeddingStore, path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, vec in zip(store.vocab, store.vectors):
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def embed_tokens(store: EmbeddingStore, tokens: Iterable[str]) -> tuple[np.ndarray, int]:
    """Mean of the in-vocabulary token vectors, plus the number of OOV tokens.

    Returns the zero vector when no token is in the vocabulary.
    """
    rows = []
    oov = 0
    for tok in tokens:
        r = store.token_index.get(tok)
        if r is None:
            oov += 1
        else:
            rows.append(r)
    if not rows:
        return np.zeros(store.dim), oov
    # sorted rows make the sum independent of token order
    rows.sort()
    return store.vectors[rows].mean(axis=0), oov


# ---------------------------------------------------------------------------
# exact search


def _rank(rows: np.ndarray, dist: np.ndarray, self_row: int, k: int, exclude_self: bool):
    if exclude_self:
        keep = rows != self_row
        rows, dist = rows[keep], dist[keep]
    order = np.lexsort((rows, dist))[:k]
    return rows[order], dist[order]


def brute_force_nearest(store: EmbeddingStore, token: str, k: int, exclude_self: bool = True) -> list[tuple[str, float]]:
    """Exact k nearest neighbours by full scan. Ties go to the lower row id."""
    if k < 1:
        raise ValueError("k must be positive")
    r = store.row(token)
    rows = np.arange(len(store), dtype=np.int64)
    dist = kernels.angular_to_rows(store.unit, store.unit[r], rows)
    rows, dist = _rank(rows, dist, r, k, exclude_self)
    return [(store.vocab[i], float(d)) for i, d in zip(rows, dist)]


# ---------------------------------------------------------------------------
# random-projection forest


@dataclass(frozen=True, eq=False)
class NeighborIndex:
    store: EmbeddingStore
    n_trees: int
    leaf_size: int
    seed: int
    search_k: int
    normals: np.ndarray
    thresholds: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_end: np.ndarray
    leaf_items: np.ndarray
    roots: np.ndarray
    store_checksum: str = ""

    @property
    def n_nodes(self) -> int:
        return int(self.left.shape[0])

    def tree_leaves(self, tree: int) -> list[np.ndarray]:
        """Item ids of every leaf of one tree, in depth-first order."""
        out = []
        stack = [int(self.roots[tree])]
        while stack:
            node = stack.pop()
            if self.left[node] < 0:
                out.append(self.leaf_items[self.leaf_start[node]:self.leaf_end[node]])
            else:
                stack.append(int(self.right[node]))
                stack.append(int(self.left[node]))
        return out

    def same_structure(self, other: "NeighborIndex") -> bool:
        names = ("normals", "thresholds", "left", "right", "leaf_start", "leaf_end", "leaf_items", "roots")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


class _ForestBuilder:
    def __init__(self, unit: np.ndarray, leaf_size: int, rng: np.random.Generator):
        self.unit = unit
        self.leaf_size = leaf_size
        self.rng = rng
        self.normals: list[np.ndarray] = []
        self.thresholds: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_start: list[int] = []
        self.leaf_end: list[int] = []
        self.leaf_items: list[np.ndarray] = []
        self._n_leaf_items = 0
        self._zero = np.zeros(unit.shape[1])

    def _new_node(self) -> int:
        self.normals.append(self._zero)
        self.thresholds.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_start.append(0)
        self.leaf_end.append(0)
        return len(self.left) - 1

    def _split(self, rows: np.ndarray):
        unit = self.unit
        for _ in range(3):
            i, j = self.rng.choice(rows.shape[0], size=2, replace=False)
            p, q = unit[rows[i]], unit[rows[j]]
            diff = p - q
            norm = np.linalg.norm(diff)
            if norm == 0.0:
                continue
            normal = diff / norm
            threshold = float(normal @ ((p + q) / 2.0))
            margins = unit[rows] @ normal - threshold
            go_right = margins > 0.0
            n_right = int(go_right.sum())
            if 0 < n_right < rows.shape[0]:
                return normal, threshold, rows[~go_right], rows[go_right]
        # degenerate partition (e.g. many identical vectors): random halves,
        # zero normal so queries explore both sides with equal priority
        perm = self.rng.permutation(rows.shape[0])
        half = rows.shape[0] // 2
        return self._zero, 0.0, rows[np.sort(perm[:half])], rows[np.sort(perm[half:])]

    def build_tree(self, rows: np.ndarray) -> int:
        root = self._new_node()
        stack = [(root, rows)]
        while stack:
            node, rows = stack.pop()
            if rows.shape[0] <= self.leaf_size:
                self.leaf_start[node] = self._n_leaf_items
                self._n_leaf_items += rows.shape[0]
                self.leaf_end[node] = self._n_leaf_items
                self.leaf_items.append(rows)
                continue
            normal, threshold, lrows, rrows = self._split(rows)
            self.normals[node] = normal
            self.thresholds[node] = threshold
            lnode = self._new_node()
            rnode = self._new_node()
            self.left[node] = lnode
            self.right[node] = rnode
            stack.append((rnode, rrows))
            stack.append((lnode, lrows))
        return root


def build_index(
    store: EmbeddingStore,
    n_trees: int = DEFAULT_N_TREES,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    seed: int = 0,
    search_k: int | None = None,
) -> NeighborIndex:
    """Build a random-projection forest over ``store``; deterministic per ``seed``.

    ``search_k`` is the number of candidate items gathered per query before
    exact re-ranking; it defaults to ``6 * n_trees * leaf_size``.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be positive")
    if leaf_size < 1:
        raise ValueError("leaf_size must be positive")
    if len(store) < 2:
        raise ValueError("need at least 2 vectors to build an index")
    if search_k is None:
        search_k = _SEARCH_K_PER_TREE_LEAF * n_trees * leaf_size
    if search_k < 1:
        raise ValueError("search_k must be positive")
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    builder = _ForestBuilder(store.unit, leaf_size, rng)
    all_rows = np.arange(len(store), dtype=np.int64)
    roots = [builder.build_tree(all_rows) for _ in range(n_trees)]
    arrays = dict(
        normals=np.ascontiguousarray(np.vstack(builder.normals)),
        thresholds=np.asarray(builder.thresholds, dtype=np.float64),
        left=np.asarray(builder.left, dtype=np.int64),
        right=np.asarray(builder.right, dtype=np.int64),
        leaf_start=np.asarray(builder.leaf_start, dtype=np.int64),
        leaf_end=np.asarray(builder.leaf_end, dtype=np.int64),
        leaf_items=np.concatenate(builder.leaf_items).astype(np.int64),
        roots=np.asarray(roots, dtype=np.int64),
    )
    return NeighborIndex(store=store, n_trees=n_trees, leaf_size=leaf_size, seed=seed, search_k=search_k,
                         store_checksum=store.checksum(), **arrays)


def candidates(index: NeighborIndex, query: np.ndarray, search_k: int | None = None) -> np.ndarray:
    """Row ids gathered by best-first descent across all trees."""
    return kernels.forest_candidates(
        index.normals, index.thresholds, index.left, index.right, index.leaf_start, index.leaf_end,
        index.leaf_items, index.roots, np.ascontiguousarray(query, dtype=np.float64),
        int(search_k or index.search_k), len(index.store),
    )


def nearest(
    index: NeighborIndex, token: str, k: int, exclude_self: bool = True, search_k: int | None = None
) -> list[tuple[str, float]]:
    """Approximate k nearest neighbours of an in-vocabulary token."""
    if k < 1:
        raise ValueError("k must be positive")
    store = index.store
    r = store.row(token)
    q = store.unit[r]
    # leave room for the query itself, which is always among the candidates
    rows = candidates(index, q, max(int(search_k or index.search_k), k + 1))
    dist = kernels.angular_to_rows(store.unit, q, rows)
    rows, dist = _rank(rows, dist, r, k, exclude_self)
    return [(store.vocab[i], float(d)) for i, d in zip(rows, dist)]


def recall_at_1(index: NeighborIndex, tokens: Sequence[str]) -> float:
    hits = 0
    for tok in tokens:
        approx = nearest(index, tok, 1, exclude_self=True)
        exact = brute_force_nearest(index.store, tok, 1, exclude_self=True)
        # equal distance counts as a hit: duplicate vectors make the id arbitrary
        if approx and exact and (approx[0][0] == exact[0][0] or approx[0][1] <= exact[0][1]):
            hits += 1
    return hits / max(1, len(tokens))


# ---------------------------------------------------------------------------
# persistence

_ARRAY_FIELDS = ("normals", "thresholds", "left", "right", "leaf_start", "leaf_end", "leaf_items", "roots")


def save_index(index: NeighborIndex, path: str | PathLike) -> None:
    meta = dict(n_trees=index.n_trees, leaf_size=index.leaf_size, seed=index.seed, search_k=index.search_k,
                store_checksum=index.store_checksum, n_items=len(index.store))
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                 **{n: getattr(index, n) for n in _ARRAY_FIELDS})


def load_index(path: str | PathLike, store: EmbeddingStore) -> NeighborIndex:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        arrays = {n: data[n] for n in _ARRAY_FIELDS}
    if meta["store_checksum"] != store.checksum():
        raise IndexMismatchError(f"{path}: index was built from a different embedding store")
    return NeighborIndex(store=store, n_trees=meta["n_trees"], leaf_size=meta["leaf_size"], seed=meta["seed"],
                         search_k=meta["search_k"], store_checksum=meta["store_checksum"], **arrays)
