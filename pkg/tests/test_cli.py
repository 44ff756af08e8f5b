import json
import subprocess
import sys

import pytest

from highway_rt.cli import main

TINY = {"d_emb": 6, "d_feat": 2, "n_heads": 2, "d_p": 4, "d_h": 16, "n_blocks": 1,
        "steps": 12, "log_every": 4, "eval_every": 6, "lr": 0.01}


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["synth", "--n", "6", "--seed", "3", "--out", str(tmp_path / "corpus.jsonl")]) == 0
    return tmp_path


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


def test_synth_writes_corpus(workdir):
    lines = (workdir / "corpus.jsonl").read_text().splitlines()
    assert len(lines) == 6
    rec = json.loads(lines[0])
    assert len(rec["candidates"]) == 100 and sum(rec["labels"]) == 1


def test_train_eval_predict(workdir, capsys):
    ckpt = workdir / "m.ckpt"
    assert main(["train", "--config", str(workdir / "cfg.json"), "--corpus", str(workdir / "corpus.jsonl"),
                 "--out", str(ckpt)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 12 and ckpt.exists()
    log = [json.loads(line) for line in (workdir / "m.ckpt.log.jsonl").read_text().splitlines()]
    assert log[0]["split"] == "train"

    assert main(["eval", "--ckpt", str(ckpt), "--corpus", str(workdir / "corpus.jsonl"), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"recall@1", "recall@10", "recall@50", "mrr"}

    assert main(["eval", "--ckpt", str(ckpt), "--corpus", str(workdir / "corpus.jsonl")]) == 0
    assert capsys.readouterr().out.startswith("Recall@1")

    assert main(["predict", "--ckpt", str(ckpt), "--dialogue", str(workdir / "corpus.jsonl")]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 6
    assert set(rows[0]) == {"dialogue_id", "scores", "ranking"}
    assert sorted(rows[0]["ranking"]) == list(range(100))


def test_train_is_deterministic_and_seed_overrides(workdir, capsys):
    args = ["train", "--config", str(workdir / "cfg.json"), "--corpus", str(workdir / "corpus.jsonl")]
    for name, extra in [("a", []), ("b", []), ("c", ["--seed", "99"])]:
        assert main(args + ["--out", str(workdir / f"{name}.ckpt")] + extra) == 0
    capsys.readouterr()
    read = lambda n, suffix: (workdir / f"{n}.ckpt{suffix}").read_bytes()
    assert read("a", "") == read("b", "") and read("a", ".log.jsonl") == read("b", ".log.jsonl")
    assert read("a", "") != read("c", "")


def test_unknown_config_key(workdir, capsys):
    bad = workdir / "bad.json"
    bad.write_text(json.dumps({"d_emb": 6, "dropout": 0.1}))
    code = main(["train", "--config", str(bad), "--corpus", str(workdir / "corpus.jsonl"), "--out", "x"])
    assert code != 0
    err = last_error(capsys)
    assert err["error"] == "ConfigError" and "dropout" in err["message"]


def test_missing_corpus(workdir, capsys):
    assert main(["eval", "--ckpt", str(workdir / "none.ckpt"), "--corpus", "nope.jsonl"]) != 0
    assert last_error(capsys)["error"] == "FileNotFoundError"


def test_malformed_corpus_line(workdir, capsys):
    bad = workdir / "bad.jsonl"
    bad.write_text((workdir / "corpus.jsonl").read_text().splitlines()[0] + "\n[1,2\n")
    code = main(["train", "--corpus", str(bad), "--out", str(workdir / "z.ckpt")])
    assert code != 0
    err = last_error(capsys)
    assert err["error"] == "CorpusFormatError" and err["message"].startswith("line 2")


def test_usage_error(capsys):
    assert main(["train"]) == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "UsageError"


def test_gradcheck_command(workdir, capsys):
    cfg = workdir / "g.json"
    cfg.write_text(json.dumps({"d_emb": 6, "d_feat": 2, "n_heads": 2, "d_p": 4, "d_h": 16, "pooling": "attention"}))
    assert main(["gradcheck", "--config", str(cfg), "--max-entries", "4"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith("PASS")


def test_module_entry_point(tmp_path):
    out = tmp_path / "s.jsonl"
    proc = subprocess.run([sys.executable, "-m", "highway_rt", "synth", "--n", "2", "--seed", "1", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["records"] == 2
    proc = subprocess.run([sys.executable, "-m", "highway_rt", "synth", "--n", "-1", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert json.loads(proc.stderr)["error"] == "ConfigError"


def test_pretrained_embeddings_stay_frozen(workdir, capsys):
    emb = workdir / "vectors.txt"
    emb.write_text("w1 " + " ".join(["0.5"] * 6) + "\n")
    cfg = workdir / "frozen.json"
    cfg.write_text(json.dumps({**TINY, "freeze_embeddings": True}))
    ckpt = workdir / "f.ckpt"
    assert main(["train", "--config", str(cfg), "--corpus", str(workdir / "corpus.jsonl"), "--out", str(ckpt),
                 "--embeddings", str(emb)]) == 0
    capsys.readouterr()
    from highway_rt.checkpoint import load_checkpoint

    model = load_checkpoint(ckpt)
    row = model.params.embedding.data[model.vocab.stoi["w1"]]
    assert row.tolist() == [0.5] * 6
