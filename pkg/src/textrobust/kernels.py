"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module dispatch on the backend chosen in
:mod:`textrobust._accel`. Both implementations are always importable so the
benchmark and the tests can compare them directly.
"""
from __future__ import annotations

import heapq

import numpy as np

from ._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# numpy reference implementations


def angular_to_rows_np(unit: np.ndarray, query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    d = 1.0 - unit[rows] @ query
    return np.maximum(d, 0.0)


def forest_candidates_np(
    normals: np.ndarray,
    thresholds: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    leaf_start: np.ndarray,
    leaf_end: np.ndarray,
    leaf_items: np.ndarray,
    roots: np.ndarray,
    query: np.ndarray,
    search_k: int,
    n_items: int,
) -> np.ndarray:
    seen = np.zeros(n_items, dtype=np.bool_)
    out = []
    heap = [(-np.inf, int(r)) for r in roots]
    heapq.heapify(heap)
    while heap and len(out) < search_k:
        neg_prio, node = heapq.heappop(heap)
        prio = -neg_prio
        if left[node] < 0:
            for item in leaf_items[leaf_start[node]:leaf_end[node]]:
                if not seen[item]:
                    seen[item] = True
                    out.append(int(item))
            continue
        margin = float(normals[node] @ query) - thresholds[node]
        heapq.heappush(heap, (-min(prio, margin), int(right[node])))
        heapq.heappush(heap, (-min(prio, -margin), int(left[node])))
    return np.asarray(out, dtype=np.int64)


def confusion_counts_np(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    flat = np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes).astype(np.int64)


def histogram_counts_np(values: np.ndarray, bins: int) -> np.ndarray:
    idx = np.floor(values * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    return np.bincount(idx, minlength=bins).astype(np.int64)


# ---------------------------------------------------------------------------
# numba implementations (plain python loops when numba is unavailable)


@njit(cache=True)
def angular_to_rows_nb(unit, query, rows):
    out = np.empty(rows.shape[0], dtype=np.float64)
    dim = query.shape[0]
    for i in range(rows.shape[0]):
        r = rows[i]
        s = 0.0
        for j in range(dim):
            s += unit[r, j] * query[j]
        d = 1.0 - s
        out[i] = d if d > 0.0 else 0.0
    return out


@njit(cache=True)
def forest_candidates_nb(
    normals, thresholds, left, right, leaf_start, leaf_end, leaf_items, roots, query, search_k, n_items
):
    seen = np.zeros(n_items, dtype=np.bool_)
    out = np.empty(n_items, dtype=np.int64)
    n_out = 0
    heap = [(-np.inf, np.int64(roots[0]))]
    for t in range(1, roots.shape[0]):
        heapq.heappush(heap, (-np.inf, np.int64(roots[t])))
    dim = query.shape[0]
    while len(heap) > 0 and n_out < search_k:
        neg_prio, node = heapq.heappop(heap)
        prio = -neg_prio
        if left[node] < 0:
            for p in range(leaf_start[node], leaf_end[node]):
                item = leaf_items[p]
                if not seen[item]:
                    seen[item] = True
                    out[n_out] = item
                    n_out += 1
            continue
        margin = 0.0
        for j in range(dim):
            margin += normals[node, j] * query[j]
        margin -= thresholds[node]
        heapq.heappush(heap, (-min(prio, margin), np.int64(right[node])))
        heapq.heappush(heap, (-min(prio, -margin), np.int64(left[node])))
    return out[:n_out].copy()


@njit(cache=True)
def confusion_counts_nb(y_true, y_pred, n_classes):
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    for i in range(y_true.shape[0]):
        out[y_true[i], y_pred[i]] += 1
    return out


@njit(cache=True)
def histogram_counts_nb(values, bins):
    out = np.zeros(bins, dtype=np.int64)
    for i in range(values.shape[0]):
        b = int(np.floor(values[i] * bins))
        if b < 0:
            b = 0
        elif b >= bins:
            b = bins - 1
        out[b] += 1
    return out


# ---------------------------------------------------------------------------
# dispatch

if HAVE_NUMBA:
    angular_to_rows = angular_to_rows_nb
    forest_candidates = forest_candidates_nb
    confusion_counts = confusion_counts_nb
    histogram_counts = histogram_counts_nb
else:
    angular_to_rows = angular_to_rows_np
    forest_candidates = forest_candidates_np
    confusion_counts = confusion_counts_np
    histogram_counts = histogram_counts_np
