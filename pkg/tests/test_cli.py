import json
import shutil
import subprocess
import sys

import pytest

from textrobust import harness
from textrobust.cli import load_run_config, main
from textrobust.errors import ConfigError, TrainingDivergedError
from textrobust.synthetic import SyntheticSpec, write_fixture


@pytest.fixture(scope="module")
def small_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("fx")
    write_fixture(root, SyntheticSpec(n_docs=150, seed=3))
    cfg = json.loads((root / "config.json").read_text())
    cfg["train"].update(epochs=2, hidden_width=8)
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def _copy(small_fixture, tmp_path):
    dst = tmp_path / "fx"
    shutil.copytree(small_fixture, dst)
    return dst


def _perturb_args(fx, out, *extra):
    return ["perturb", "--corpus", str(fx / "corpus.jsonl"), "--lexicon", str(fx / "lexicons" / "hedges.txt"),
            "--out", str(out), *extra]


def test_perturb_char_ok_and_deterministic(small_fixture, tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(_perturb_args(small_fixture, a, "--mode", "char", "--rate", "0.25", "--seed", "7")) == 0
    assert "mean positions changed" in capsys.readouterr().out
    assert main(_perturb_args(small_fixture, b, "--mode", "char", "--rate", "0.25", "--seed", "7")) == 0
    assert a.read_bytes() == b.read_bytes()
    ra, rb = tmp_path / "a.receipts.jsonl", tmp_path / "b.receipts.jsonl"
    assert ra.read_bytes() == rb.read_bytes()
    rec = json.loads(ra.read_text().splitlines()[0])
    assert rec["mode"] == "char" and len(rec["positions_changed"]) == rec["target_count"]
    first = json.loads(a.read_text().splitlines()[0])
    assert first["provenance"] == "char_perturbed"


def test_perturb_word(small_fixture, tmp_path):
    out = tmp_path / "w.jsonl"
    args = _perturb_args(small_fixture, out, "--mode", "word", "--embeddings", str(small_fixture / "embeddings.txt"))
    assert main(args) == 0
    assert len(out.read_text().splitlines()) == 150


def test_perturb_bad_rate_is_usage_error(small_fixture, tmp_path, capsys):
    code = main(_perturb_args(small_fixture, tmp_path / "x.jsonl", "--mode", "char", "--rate", "1.5"))
    assert code == 2
    assert "--rate" in capsys.readouterr().err
    assert not (tmp_path / "x.jsonl").exists()


def test_perturb_word_needs_embeddings(small_fixture, tmp_path):
    assert main(_perturb_args(small_fixture, tmp_path / "x.jsonl", "--mode", "word")) == 2


def test_argparse_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["perturb", "--mode", "char"])
    assert exc.value.code == 2


def test_index_build_check_and_verify(small_fixture, tmp_path, capsys):
    idx = tmp_path / "i.npz"
    emb = str(small_fixture / "embeddings.txt")
    assert main(["index", "--embeddings", emb, "--out", str(idx), "--check", "50"]) == 0
    out = capsys.readouterr().out
    assert "recall@1" in out
    recall = float(out.strip().split()[-1])
    assert recall >= 0.95
    assert main(["index", "--embeddings", emb, "--verify", str(idx), "--check", "0"]) == 0


def test_index_errors(small_fixture, tmp_path, write):
    bad = write("bad.txt", "a 1 0\nb 1\n")
    assert main(["index", "--embeddings", str(bad), "--check", "0"]) == 2
    idx = tmp_path / "i.npz"
    assert main(["index", "--embeddings", str(small_fixture / "embeddings.txt"), "--out", str(idx),
                 "--check", "0"]) == 0
    other = write("other.txt", "a 1 0\nb 0 1\nc 1 1\n")
    assert main(["index", "--embeddings", str(other), "--verify", str(idx)]) == 2


def test_run_dry_run_writes_nothing(small_fixture, tmp_path, capsys):
    out = tmp_path / "bundle"
    assert main(["run", "--config", str(small_fixture / "config.json"), "--out", str(out), "--dry-run"]) == 0
    text = capsys.readouterr().out
    assert "planned 32 cells" in text
    assert not out.exists()


def test_run_missing_confusables_fails_fast(small_fixture, tmp_path, capsys):
    fx = _copy(small_fixture, tmp_path)
    cfg = json.loads((fx / "config.json").read_text())
    cfg["paths"]["confusables"] = "nope.txt"
    (fx / "config.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(fx / "config.json"), "--out", str(tmp_path / "o")]) == 2
    assert "confusables" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_config_errors(small_fixture, tmp_path, write):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["run", "--config", str(write("bad.json", "{not json"))]) == 2
    fx = _copy(small_fixture, tmp_path)
    cfg = json.loads((fx / "config.json").read_text())
    cfg["grid"]["defenses"] = ["Tr", "EnsC"]
    (fx / "config.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(fx / "config.json")]) == 2


def test_run_divergence_is_runtime_error(small_fixture, tmp_path, capsys, monkeypatch):
    fx = _copy(small_fixture, tmp_path)
    cfg = json.loads((fx / "config.json").read_text())
    cfg["grid"].update(defenses=["Tr"], attacks=["Te"])
    (fx / "config.json").write_text(json.dumps(cfg))

    def diverge(*args, **kwargs):
        raise TrainingDivergedError("non-finite loss at epoch 1")

    monkeypatch.setattr(harness, "train_arrays", diverge)
    assert main(["run", "--config", str(fx / "config.json"), "--out", str(tmp_path / "o")]) == 1
    assert "defense Tr" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_and_report(small_fixture, tmp_path):
    out = tmp_path / "bundle"
    assert main(["run", "--config", str(small_fixture / "config.json"), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["fig4_confidence.csv", "fig5_highconf.csv", "fig6_impact.csv", "run.json", "table1.csv"]
    doc = json.loads((out / "run.json").read_text())
    assert len(doc["cells"]) == 32
    assert doc["seeds"]["base"] == 7 and doc["seeds"]["train"] == 11
    assert doc["config"]["source"]["task"] == "three_way"
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    for p in out.glob("*.csv"):
        p.unlink()
    assert main(["report", "--run", str(out / "run.json")]) == 0
    for name, data in before.items():
        assert (out / name).read_bytes() == data
    assert not list(tmp_path.glob(".*lock"))


def test_env_and_flag_precedence(small_fixture, monkeypatch):
    monkeypatch.setenv("TEXTROBUST_SEED", "21")
    cfg = load_run_config(small_fixture / "config.json")
    assert cfg.seed == 7
    cfg = load_run_config(small_fixture / "config.json", seed=5)
    assert cfg.seeds["train"] == 9


def test_env_seed_reaches_command(small_fixture, tmp_path, monkeypatch, capsys):
    out = tmp_path / "e"
    monkeypatch.setenv("TEXTROBUST_OUT", str(out))
    monkeypatch.setenv("TEXTROBUST_DRY_RUN", "1")
    assert main(["run", "--config", str(small_fixture / "config.json")]) == 0
    assert str(out) in capsys.readouterr().out
    assert not out.exists()
    monkeypatch.setenv("TEXTROBUST_SEED", "x")
    assert main(["run", "--config", str(small_fixture / "config.json")]) == 2


def test_locked_output_is_rejected(small_fixture, tmp_path):
    out = tmp_path / "bundle"
    (tmp_path / ".bundle.lock").write_text("123")
    assert main(["run", "--config", str(small_fixture / "config.json"), "--out", str(out)]) == 2
    assert not out.exists()


def test_load_run_config_resolves_relative_paths(small_fixture):
    cfg = load_run_config(small_fixture / "config.json")
    assert cfg.corpus == (small_fixture / "corpus.jsonl").resolve()
    cfg.validate_paths()
    with pytest.raises(ConfigError):
        load_run_config(small_fixture / "nope.json")


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "textrobust.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "textrobust" in res.stdout
