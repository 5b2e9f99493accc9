import csv
import io
import json

import numpy as np
import pytest

from textrobust.confusables import load_confusables
from textrobust.corpus import THREE_WAY, Dataset, Lexicon, make_example, stratified_split
from textrobust.embeddings import build_index
from textrobust.errors import ConfigError
from textrobust.harness import (
    ALL_ATTACKS, ALL_DEFENSES, GridConfig, attack_names, dump_run_json, fmt, planned_cells, render_reports,
    run_document, run_grid, write_bundle,
)
from textrobust.model import TrainConfig
from textrobust.synthetic import SyntheticSpec, generate

from conftest import make_store

FAST = TrainConfig(learning_rate=3e-3, epochs=4, hidden_width=8)


@pytest.fixture(scope="module")
def mini():
    vocab, vectors, lexicons, records = generate(SyntheticSpec(n_docs=240, seed=5))
    store = make_store(vocab, vectors)
    lexs = [Lexicon(name, frozenset(words)) for name, words in lexicons.items()]
    exs = [make_example(r["id"], r["text"], r["label"], lexs) for r in records]
    tr, te = stratified_split(Dataset(THREE_WAY, exs), 0.25, seed=1)
    index = build_index(store, 8, 16, seed=2)
    return dict(store=store, lexicons=lexs, train=tr, test=te, index=index, table=load_confusables())


def test_config_validation():
    GridConfig(THREE_WAY)
    with pytest.raises(ConfigError, match="TrHalfC"):
        GridConfig(THREE_WAY, defenses=("Tr", "TrFullC", "EnsC"))
    with pytest.raises(ConfigError):
        GridConfig(THREE_WAY, threshold=1.0)
    with pytest.raises(ConfigError):
        GridConfig(THREE_WAY, attacks=("TeX",))
    with pytest.raises(ConfigError):
        GridConfig(THREE_WAY, defenses=("Tr", "Tr"))
    cfg = GridConfig(THREE_WAY, defenses=("Tr", "Tr½C", "Tr¹C", "Ens_C"), attacks=("Te", "Te′C"))
    assert cfg.defenses == ("Tr", "TrHalfC", "TrFullC", "EnsC")
    assert cfg.needs_char and not cfg.needs_word


def test_attack_names_with_several_word_stores():
    cfg = GridConfig(THREE_WAY)
    names = [n for n, _, _ in attack_names(cfg, ["glove", "elmo"])]
    assert names == ["Te", "TeC", "TeW@glove", "TeW@elmo", "TeMixed@glove", "TeMixed@elmo"]
    assert len(planned_cells(cfg)) == 32


def test_single_cell_self_baseline(mini):
    cfg = GridConfig(THREE_WAY, defenses=("Tr",), attacks=("Te",), train=FAST)
    res = run_grid(cfg, mini["train"], mini["test"], mini["store"], mini["lexicons"])
    assert len(res.cells) == 1
    cell = res.cells[0]
    assert cell.relative_diff in (0.0, None)
    if cell.error_rate > 0:
        assert cell.relative_diff == 0.0


def test_missing_inputs_fail_before_training(mini):
    cfg = GridConfig(THREE_WAY, defenses=("Tr",), attacks=("TeC",), train=FAST)
    with pytest.raises(ConfigError):
        run_grid(cfg, mini["train"], mini["test"], mini["store"], mini["lexicons"])
    cfg = GridConfig(THREE_WAY, defenses=("Tr",), attacks=("TeW",), train=FAST)
    with pytest.raises(ConfigError):
        run_grid(cfg, mini["train"], mini["test"], mini["store"], mini["lexicons"], table=mini["table"])


@pytest.fixture(scope="module")
def full(mini):
    cfg = GridConfig(THREE_WAY, train=FAST)
    return run_grid(cfg, mini["train"], mini["test"], mini["store"], mini["lexicons"], mini["table"],
                    {"synthetic": mini["index"]})


def test_full_grid_invariants(full, mini):
    assert len(full.cells) == 32
    n_te = len(mini["test"])
    for c in full.cells:
        assert c.defense in ALL_DEFENSES and c.attack in ALL_ATTACKS
        assert c.n == (3 * n_te if c.attack == "TeMixed" else n_te)
        assert abs(c.high_conf_error_rate + c.low_conf_error_rate - c.error_rate) <= 1e-12
        assert c.high_conf_errors + c.low_conf_errors == c.errors
        assert sum(c.confidence_histogram) == c.n
        assert len(c.confidence_histogram) == 20
        assert c.binary_error_rate <= c.error_rate
        assert 0 <= c.multiclass_f1 <= 1 and 0 <= c.binary_f1 <= 1
    for d in ALL_DEFENSES:
        base = full.cell(d, "Te")
        assert base.relative_diff in (0.0, None)
        for a in ("TeC", "TeW", "TeMixed"):
            c = full.cell(d, a)
            if base.error_rate > 0:
                assert c.relative_diff == pytest.approx((c.error_rate - base.error_rate) / base.error_rate, abs=1e-15)
        mixed = full.cell(d, "TeMixed")
        assert set(mixed.subsets) == {"Te", "TeC", "TeW"}
        assert mixed.subsets["Te"] == base.error_rate
        assert mixed.subsets["TeC"] == full.cell(d, "TeC").error_rate
        assert mixed.error_rate == pytest.approx(np.mean(list(mixed.subsets.values())), abs=1e-12)


def test_grid_is_deterministic(full, mini):
    again = run_grid(GridConfig(THREE_WAY, train=FAST), mini["train"], mini["test"], mini["store"],
                     mini["lexicons"], mini["table"], {"synthetic": mini["index"]})
    assert [c.to_dict() for c in again.cells] == [c.to_dict() for c in full.cells]


def test_reports(full, tmp_path):
    doc = run_document(full, {"k": 1}, {"split": 3}, timestamp="t")
    write_bundle(doc, tmp_path)
    assert json.loads((tmp_path / "run.json").read_text()) == json.loads(dump_run_json(doc))
    table = list(csv.reader(io.StringIO((tmp_path / "table1.csv").read_text())))
    assert table[0][:3] == ["defense", "Te_error_rate", "Te_relative_diff"]
    assert [r[0] for r in table[1:]] == list(ALL_DEFENSES)
    for row in table[1:]:
        for value in row[1:]:
            assert value == "undefined" or len(value.split(".")[1]) == 6
    fig4 = list(csv.reader(io.StringIO((tmp_path / "fig4_confidence.csv").read_text())))
    assert len(fig4) == 1 + 32 * 20
    assert fig4[1][3:5] == ["0.000000", "0.050000"]
    fig5 = list(csv.reader(io.StringIO((tmp_path / "fig5_highconf.csv").read_text())))
    assert len(fig5) == 33
    again = render_reports(doc["cells"], 20)
    for name, text in again.items():
        assert (tmp_path / name).read_text() == text


def test_fmt():
    assert fmt(None) == "undefined"
    assert fmt(0.1) == "0.100000"
    assert fmt(-1 / 3) == "-0.333333"
