import io
import json
import subprocess
import sys

import numpy as np
import pytest

from sceneknow import cli
from sceneknow.config import ConfigError, apply_override, default_config, load_config
from sceneknow.kb import EntityRecord, KnowledgeBase, build_prior_table, save_kb


def run(argv, capsys, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def apple_kb(tmp_path):
    kb = KnowledgeBase([EntityRecord("fruit", "Apple (fruit)", np.ones(3)),
                        EntityRecord("company", "Apple Inc.", np.zeros(3))])
    save_kb(kb, build_prior_table([{"apple": {"fruit": 3, "company": 1}}]), tmp_path / "kb")
    return tmp_path / "kb"


def test_link_prints_candidates(apple_kb, capsys, monkeypatch):
    code, out, _ = run(["link", "--kb", str(apple_kb)], capsys, "Apple\n", monkeypatch)
    assert code == 0
    assert out.splitlines() == ["apple\t1\tfruit\t0.75", "apple\t2\tcompany\t0.25"]


def test_link_unknown_mention_goes_to_stderr(apple_kb, capsys, monkeypatch):
    code, out, err = run(["link", "--kb", str(apple_kb), "-C", "1"], capsys, "pear\napple\n", monkeypatch)
    assert code == 0 and out == "apple\t1\tfruit\t0.75\n" and "pear" in err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["link", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_runtime_failure_exits_1(tmp_path, capsys):
    code, out, err = run(["eval", "--checkpoint", str(tmp_path / "missing.tsv"), "--data", "x"], capsys)
    assert code == 1 and out == "" and "error" in err


def test_synth_train_eval_reproduces_logged_map(tmp_path, capsys):
    d = tmp_path / "task"
    code, _, _ = run(["synth", "--out", str(d), "--alpha", "1.0", "--train-per-class", "5",
                      "--eval-per-class", "3"], capsys)
    assert code == 0
    for name in ("train.tsv", "eval.tsv", "vocab.txt", "config.json", "kb/entities.tsv", "kb/priors.tsv"):
        assert (d / name).exists()
    cfg = str(d / "config.json")
    code, out, _ = run(["train", "--config", cfg, "--set", "optim.epochs=10", "--set", "optim.warmup_iters=1", "--set", "optim.learning_rate=0.05",
                        "--set", "model.text_mode=none",
                        "--set", "model.use_vkac=false"], capsys)
    assert code == 0 and "eval_map" in out
    logged = json.loads((d / "run" / "metrics.jsonl").read_text().splitlines()[-1])
    code, out, _ = run(["eval", "--config", cfg], capsys)
    assert code == 0
    assert out.splitlines()[-1] == f"mAP\t{logged['eval_map']!r}"
    assert logged["eval_map"] == 1.0


def test_train_flags_override_file(tmp_path, capsys):
    d = tmp_path / "task"
    run(["synth", "--out", str(d), "--train-per-class", "2", "--eval-per-class", "1"], capsys)
    code, _, _ = run(["train", "--config", str(d / "config.json"), "--set", "optim.epochs=1",
                      "--set", "model.text_mode=literal", "--out-dir", str(tmp_path / "elsewhere")], capsys)
    assert code == 0
    saved = json.loads((tmp_path / "elsewhere" / "config.json").read_text())
    assert saved["optim"]["epochs"] == 1 and saved["model"]["text_mode"] == "literal"
    assert (tmp_path / "elsewhere" / "checkpoint.tsv").exists()


def test_gradcheck_single_seed(capsys):
    code, out, _ = run(["gradcheck", "--seeds", "5"], capsys)
    assert code == 0
    rows = dict(line.split("\t") for line in out.splitlines())
    assert set(rows) == {"numeric-core", "encoder-karc", "vision-encoder", "vkac-classifier", "full-stack"}
    assert all(float(v) < 1e-4 for v in rows.values())


def test_module_entry_point(apple_kb):
    proc = subprocess.run([sys.executable, "-m", "sceneknow", "link", "--kb", str(apple_kb)], input="apple\n",
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("apple\t1\tfruit")


# -- config ---------------------------------------------------------------------------

def test_default_config_covers_every_dataclass_default():
    cfg = default_config()
    assert cfg["model"]["threshold"] == 0.03 and cfg["model"]["C"] == 8
    assert cfg["optim"]["learning_rate"] == 3e-5 and cfg["optim"]["warmup_iters"] == 500
    assert cfg["synth"]["K"] == 2 and cfg["synth"]["top_prior"] == 0.6


def test_unknown_key_rejected(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"optim": {"lr": 1}}))
    with pytest.raises(ConfigError, match="optim.'lr'"):
        load_config(tmp_path / "c.json")


def test_override_parses_json_or_string():
    cfg = default_config()
    apply_override(cfg, "optim.warmup_iters=null")
    apply_override(cfg, "model.text_mode=literal")
    assert cfg["optim"]["warmup_iters"] is None and cfg["model"]["text_mode"] == "literal"
    with pytest.raises(ConfigError):
        apply_override(cfg, "optim.epochs")


def test_paths_resolve_against_config_directory(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"data": {"train": "t.tsv"}}))
    assert load_config(tmp_path / "c.json")["data"]["train"] == str(tmp_path / "t.tsv")
