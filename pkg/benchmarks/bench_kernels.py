"""Time the numba kernels against their pure-numpy counterparts.

    python benchmarks/bench_kernels.py --repeat 5

Each kernel is called once before timing so numba compilation is excluded.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from textrobust import _accel, kernels
from textrobust.embeddings import EmbeddingStore, build_index


def _best(fn, repeat: int) -> float:
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n_vocab: int, dim: int, n_labels: int, seed: int):
    rng = np.random.default_rng(seed)
    store = EmbeddingStore(dim=dim, vocab=tuple(f"w{i}" for i in range(n_vocab)),
                           vectors=rng.standard_normal((n_vocab, dim)))
    index = build_index(store, n_trees=16, leaf_size=32, seed=seed)
    rows = np.arange(n_vocab, dtype=np.int64)
    queries = store.unit[rng.choice(n_vocab, 50, replace=False)]
    forest = (index.normals, index.thresholds, index.left, index.right, index.leaf_start, index.leaf_end,
              index.leaf_items, index.roots)
    y_true = rng.integers(0, 4, n_labels)
    y_pred = rng.integers(0, 4, n_labels)
    conf = rng.random(n_labels)

    def distances(impl):
        return lambda: [impl(store.unit, q, rows) for q in queries]

    def candidates(impl):
        return lambda: [impl(*forest, q, index.search_k, n_vocab) for q in queries]

    return {
        "angular_to_rows (50 queries)": (distances(kernels.angular_to_rows_nb), distances(kernels.angular_to_rows_np)),
        "forest_candidates (50 queries)": (candidates(kernels.forest_candidates_nb),
                                           candidates(kernels.forest_candidates_np)),
        "confusion_counts": (lambda: kernels.confusion_counts_nb(y_true, y_pred, 4),
                             lambda: kernels.confusion_counts_np(y_true, y_pred, 4)),
        "histogram_counts": (lambda: kernels.histogram_counts_nb(conf, 20),
                             lambda: kernels.histogram_counts_np(conf, 20)),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vocab", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--labels", type=int, default=200000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"backend in use: {_accel.backend()}  (numba available: {_accel.HAVE_NUMBA})")
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (nb, npy) in cases(args.vocab, args.dim, args.labels, args.seed).items():
        t_np = _best(npy, args.repeat)
        if _accel.HAVE_NUMBA:
            t_nb = _best(nb, args.repeat)
            print(f"{name:34s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:34s} {'n/a':>10s} {t_np * 1e3:10.3f} {'':>8s}")


if __name__ == "__main__":
    main()
