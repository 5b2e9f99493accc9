"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary under "acceptance criteria".
"""
import itertools
import json
import math
import random
import re
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from textrobust.cli import main
from textrobust.confusables import bundled_path, load_confusables
from textrobust.corpus import THREE_WAY, TaskSchema
from textrobust.embeddings import build_index, recall_at_1
from textrobust.metrics import error_rate, f1_scores, high_confidence_split, high_impact_scores, relative_difference
from textrobust.model import Layout, ReferenceClassifier, TrainConfig, gradient_check, init_params, vote
from textrobust.perturb import CHAR, WORD, PerturbationSpec, perturb_chars, perturb_words

from conftest import FIXTURE_DIR, make_store, record_criterion


def _check(number, name, ok, detail=""):
    record_criterion(number, name, bool(ok), detail)
    assert ok, f"criterion {number} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# 1. metric oracles


def _oracle_f1(pred, true, k):
    per = []
    for c in range(k):
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        per.append(2 * prec * rec / (prec + rec) if prec + rec else Fraction(0))
    return [float(x) for x in per], float(sum(per) / k)


def test_criterion_01_metric_oracles():
    start = time.perf_counter()
    rnd = random.Random(1)
    worst = 0.0
    cases = 25
    for _ in range(cases):
        n = rnd.randint(1, 30)
        k = rnd.randint(2, 5)
        true = [rnd.randrange(k) for _ in range(n)]
        pred = [t if rnd.random() < 0.6 else rnd.randrange(k) for t in true]
        conf = [rnd.choice([0.9, rnd.random()]) for _ in range(n)]
        thr = rnd.choice([0.9, 0.5, rnd.uniform(0.05, 0.95)])

        wrong = sum(1 for p, t in zip(pred, true) if p != t)
        worst = max(worst, abs(error_rate(pred, true) - wrong / n))

        a, b = rnd.uniform(0, 1), rnd.uniform(0.01, 1)
        worst = max(worst, abs(relative_difference(a, b) - float((Fraction(a) - Fraction(b)) / Fraction(b))))

        per, macro = _oracle_f1(pred, true, k)
        got = f1_scores(pred, true, k)
        worst = max([worst, abs(got.macro_f1 - macro)] + [abs(x - y) for x, y in zip(got.per_class_f1, per)])

        split = high_confidence_split(pred, true, conf, thr)
        expect = Counter((p != t, c > thr) for p, t, c in zip(pred, true, conf))
        got_counts = (split.high_conf_errors, split.low_conf_errors, split.high_conf_correct, split.low_conf_correct)
        if got_counts != (expect[(True, True)], expect[(True, False)], expect[(False, True)], expect[(False, False)]):
            worst = math.inf
    elapsed = time.perf_counter() - start
    _check(1, "metric oracle equivalence", worst <= 1e-12 and elapsed < 1.0,
           f"{cases} cases per metric, max abs diff {worst:.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. perturbation count law


def test_criterion_02_count_law():
    start = time.perf_counter()
    table = load_confusables()
    rng = np.random.default_rng(2)
    alphabet = list("abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789.,!?") + ["é", "ß", "中", "~", "\t"]
    vocab = [f"t{i}" for i in range(300)]
    store = make_store(vocab, rng.standard_normal((300, 16)))
    index = build_index(store, 16, 32, seed=0)
    bad = 0
    for i in range(1000):
        text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 60))))
        seed = int(rng.integers(0, 2**63))
        out, rec = perturb_chars(text, PerturbationSpec(CHAR, 0.25, seed, table=table), f"id{i}")
        eligible = sum(1 for ch in text if table.map.get(ch))
        changed = sum(1 for x, y in zip(text, out) if x != y)
        if len(out) != len(text) or changed != min(math.floor(0.25 * len(text)), eligible):
            bad += 1
        tokens = [vocab[j] if rng.random() < 0.8 else f"oov{j}" for j in rng.integers(0, 300, int(rng.integers(0, 20)))]
        wout, _ = perturb_words(tokens, PerturbationSpec(WORD, 0.25, seed, index=index), f"id{i}")
        if len(wout) != len(tokens):
            bad += 1
    elapsed = time.perf_counter() - start
    _check(2, "perturbation count law", bad == 0 and elapsed < 10.0, f"1000 pairs, {bad} violations, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 3. confusables soundness


def _raw_pairs(path):
    """Independent reading of the raw file: every single-codepoint source/target pair."""
    pairs = set()
    line_re = re.compile(r"^\s*([0-9A-Fa-f]{4,6})\s*;\s*([0-9A-Fa-f]{4,6})\s*;")
    with open(path, encoding="utf-8-sig") as fh:
        for line in fh:
            m = line_re.match(line)
            if m:
                a, b = chr(int(m.group(1), 16)), chr(int(m.group(2), 16))
                if a != b:
                    pairs.add((a, b))
    return pairs


def test_criterion_03_confusables_soundness():
    start = time.perf_counter()
    table = load_confusables()
    raw = _raw_pairs(bundled_path())
    keys = sorted(table.map)
    rng = np.random.default_rng(3)
    bad = 0
    n_repl = 0
    for i in range(500):
        chars = [keys[j] for j in rng.integers(0, len(keys), 30)] + list("hello world")
        text = "".join(rng.permutation(chars))
        _, rec = perturb_chars(text, PerturbationSpec(CHAR, 0.5, i, table=table), str(i))
        for a, b in rec.replacements:
            n_repl += 1
            if b not in table.map.get(a, ()) or ((a, b) not in raw and (b, a) not in raw):
                bad += 1
    asym = sum(1 for a, alts in table.map.items() for b in alts if a not in table.map.get(b, ()))
    refl = sum(1 for a, alts in table.map.items() if a in alts)
    elapsed = time.perf_counter() - start
    _check(3, "confusables soundness", bad == 0 and asym == 0 and refl == 0 and n_repl > 0 and elapsed < 5.0,
           f"{n_repl} replacements checked, {bad} unsound, {asym} asymmetric, {refl} reflexive, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 4. ANN recall


def test_criterion_04_ann_recall():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    store = make_store([f"w{i}" for i in range(5000)], rng.standard_normal((5000, 50)))
    index = build_index(store, n_trees=16, seed=4)
    queries = [store.vocab[i] for i in rng.choice(5000, 200, replace=False)]
    recall = recall_at_1(index, queries)
    elapsed = time.perf_counter() - start
    _check(4, "ANN recall@1", recall >= 0.95 and elapsed < 30.0, f"recall {recall:.3f} on 200 queries, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 5. gradient correctness


def test_criterion_05_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        n_in, hidden, n_out, batch = (int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(2, 5)),
                                      int(rng.integers(1, 5)))
        params = init_params(n_in, hidden, n_out, rng)
        params["b1"] = rng.normal(0, 0.2, hidden)
        params["b2"] = rng.normal(0, 0.2, n_out)
        schema = TaskSchema("custom", tuple(f"c{j}" for j in range(n_out)))
        model = ReferenceClassifier(schema, Layout(n_in, 0, 0), TrainConfig(dropout=0.0), params)
        X = rng.standard_normal((batch, n_in))
        y = rng.integers(0, n_out, batch)
        worst = max(worst, gradient_check(model, X, y))
    elapsed = time.perf_counter() - start
    _check(5, "gradient correctness", worst < 1e-4 and elapsed < 30.0,
           f"20 configs, max relative error {worst:.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 6. ensemble laws


def _member(label, conf, k=3):
    p = np.full(k, (1 - conf) / (k - 1))
    p[label] = conf
    return p


def _oracle_vote(members):
    counts = Counter(lab for lab, _ in members)
    top = max(counts.values())
    tied = sorted(lab for lab, c in counts.items() if c == top)
    best = max(conf for lab, conf in members if lab in tied)
    return min(lab for lab in tied if any(l == lab and c == best for l, c in members))


def test_criterion_06_ensemble_laws():
    start = time.perf_counter()
    patterns = list(itertools.product(itertools.product(range(3), (0.4, 0.6, 0.9)), repeat=3))
    bad = {"unanimity": 0, "dominance": 0, "tie-break": 0, "confidence": 0}
    for members in patterns:
        winner, conf = vote(np.array([_member(lab, c) for lab, c in members]))
        labels = [lab for lab, _ in members]
        counts = Counter(labels)
        if len(counts) == 1 and winner != labels[0]:
            bad["unanimity"] += 1
        ranked = counts.most_common()
        if (len(ranked) == 1 or ranked[0][1] > ranked[1][1]) and winner != ranked[0][0]:
            bad["dominance"] += 1
        if winner != _oracle_vote(members):
            bad["tie-break"] += 1
        if abs(conf - np.mean([c for lab, c in members if lab == winner])) > 1e-12:
            bad["confidence"] += 1
    elapsed = time.perf_counter() - start
    _check(6, "ensemble laws", sum(bad.values()) == 0 and elapsed < 10.0,
           f"{len(patterns)} patterns, violations {bad}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 7-10. fixture grid


@pytest.fixture(scope="module")
def fixture_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    config = FIXTURE_DIR / "config.json"
    timings = []
    for name in ("first", "second"):
        t0 = time.perf_counter()
        code = main(["run", "--config", str(config), "--out", str(root / name)])
        timings.append(time.perf_counter() - t0)
        assert code == 0
    return root, timings


def _cells(root):
    return json.loads((root / "first" / "run.json").read_text())["cells"]


def test_criterion_07_binary_dominance(fixture_runs):
    root, _ = fixture_runs
    cells = _cells(root)
    bad = [(c["defense"], c["attack"]) for c in cells if 1 - c["binary_error_rate"] < 1 - c["error_rate"]]
    prop, dis = THREE_WAY.index("propaganda"), THREE_WAY.index("disinformation")
    a = high_impact_scores([prop], [dis], THREE_WAY)
    b = high_impact_scores([dis], [prop], THREE_WAY)
    example_ok = a.multiclass_error == 1.0 and a.binary_error == 0.0 and b.multiclass_error == 1.0 and b.binary_error == 0.0
    _check(7, "binary-collapse dominance", not bad and example_ok and len(cells) == 32,
           f"{len(cells)} cells, violations {bad}, propaganda/disinformation example binary-correct: {example_ok}")


def test_criterion_08_partition(fixture_runs):
    root, _ = fixture_runs
    cells = _cells(root)
    bad = [(c["defense"], c["attack"]) for c in cells
           if c["high_conf_errors"] + c["low_conf_errors"] != c["errors"]
           or abs(c["high_conf_error_rate"] + c["low_conf_error_rate"] - c["error_rate"]) > 1e-12]
    _check(8, "high/low confidence partition", not bad and len(cells) == 32, f"{len(cells)} cells, violations {bad}")


def test_criterion_09_directional(fixture_runs):
    root, timings = fixture_runs
    cells = {(c["defense"], c["attack"]): c for c in _cells(root)}
    gap = cells[("Tr", "TeC")]["relative_diff"] - cells[("TrFullC", "TeC")]["relative_diff"]
    ens, tr = cells[("EnsC", "TeMixed")]["error_rate"], cells[("Tr", "TeMixed")]["error_rate"]
    ok = len(cells) == 32 and gap >= 0.10 and ens <= tr and timings[0] < 300
    _check(9, "directional reproduction", ok,
           f"Tr minus TrFullC relative diff on TeC = {gap:+.3f}; TeMixed error EnsC {ens:.4f} vs Tr {tr:.4f}; "
           f"grid {timings[0]:.1f}s")


def test_criterion_10_determinism(fixture_runs):
    root, _ = fixture_runs

    def strip(text):
        return "\n".join(line for line in text.splitlines() if not line.lstrip().startswith('"timestamp"'))

    first = (root / "first" / "run.json").read_text()
    second = (root / "second" / "run.json").read_text()
    same_json = strip(first) == strip(second)
    csvs = sorted(p.name for p in (root / "first").glob("*.csv"))
    same_csv = all((root / "first" / n).read_bytes() == (root / "second" / n).read_bytes() for n in csvs)
    _check(10, "determinism", same_json and same_csv and len(csvs) == 4,
           f"run.json identical modulo timestamp: {same_json}; {len(csvs)} CSVs identical: {same_csv}")
