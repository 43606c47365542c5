import json

import pytest

from gsr import cli
from gsr.config import load_config
from gsr.forge import QAExample, load_samples, write_jsonl

from conftest import TOY_TSV

FAST = """
[model]
width = 16
encoder_layers = 1
decoder_layers = 1
heads = 2
ff_width = 32
dropout = 0.0

[train]
epochs = 2
index_epochs = 1
batch_size = 8
"""


@pytest.fixture
def toy_run(tmp_path):
    (tmp_path / "kg.tsv").write_text("\n".join(TOY_TSV) + "\n")
    qa = [QAExample("q1", "what is the r2 of the r1 of a", ["a"], ["c"]),
          QAExample("q2", "what is the r1 of d", ["d"], ["b"])]
    write_jsonl(tmp_path / "train.jsonl", (q.to_json() for q in qa))
    write_jsonl(tmp_path / "test.jsonl", (q.to_json() for q in qa))
    cfg = tmp_path / "gsr.ini"
    cfg.write_text("[run]\nkg = kg.tsv\ntrain = train.jsonl\ntest = test.jsonl\nout = out\nseed = 7\n" + FAST)
    return tmp_path, str(cfg)


def test_config_parsing(toy_run):
    d, cfg_path = toy_run
    cfg = load_config(cfg_path)
    assert cfg.kg == str(d / "kg.tsv") and cfg.seed == 7
    assert cfg.model.seed == 7 and cfg.training.seed == 7
    assert cfg.model.width == 16 and cfg.training.epochs == 2 and cfg.model.dropout == 0.0
    assert load_config(None).decode.k == 10


def test_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[train]\nwarp_speed = 9\n")
    with pytest.raises(KeyError):
        load_config(p)


def test_ingest_idempotent(toy_run, capsys):
    d, cfg = toy_run
    assert cli.main(["--config", cfg, "ingest"]) == 0
    manifest = json.loads((d / "out" / "manifests" / "ingest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["config_hash"]) == 64
    assert str(d / "kg.tsv") in manifest["inputs"]
    assert cli.main(["--config", cfg, "ingest"]) == 0
    assert "ingest: up-to-date" in capsys.readouterr().out
    assert cli.main(["--config", cfg, "--force", "ingest"]) == 0
    assert "ingest: done" in capsys.readouterr().out


def test_missing_input_fails(toy_run, capsys):
    _, cfg = toy_run
    assert cli.main(["--config", cfg, "mine"]) != 0
    assert "kg.snapshot" in capsys.readouterr().err


def test_filter_subset(toy_run):
    d, cfg = toy_run
    for stage in ("ingest", "mine", "filter"):
        assert cli.main(["--config", cfg, stage]) == 0
    raw = load_samples(d / "out" / "retrieval.raw.jsonl")
    filt = load_samples(d / "out" / "retrieval.filtered.jsonl")
    assert sum(len(s.chains) for s in filt) <= sum(len(s.chains) for s in raw)


def test_pipeline_and_sweep(toy_run):
    d, cfg = toy_run
    assert cli.main(["--config", cfg, "pipeline"]) == 0
    report = json.loads((d / "out" / "metrics.json").read_text())
    assert set(report["retrieval"]) == {"precision", "recall", "f1"}
    assert set(report["end_to_end"]) == {"hits_at_1", "hits", "f1"}
    for stage in cli.STAGES[:-1]:
        m = json.loads((d / "out" / "manifests" / f"{stage}.json").read_text())
        assert m["config_hash"] and m["outputs"]
    assert cli.main(["--config", cfg, "sweep", "--no-strict"]) == 0
    rows = json.loads((d / "out" / "sweep.json").read_text())["rows"]
    assert [r["k"] for r in rows] == [3, 10]


def test_pipeline_deterministic(toy_run, tmp_path_factory):
    d, cfg = toy_run
    reports, ckpts = [], []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"run{i}")
        assert cli.main(["--config", cfg, "--out", str(out), "pipeline"]) == 0
        reports.append((out / "metrics.json").read_bytes())
        ckpts.append((out / "model.ckpt").read_bytes())
    assert reports[0] == reports[1] and ckpts[0] == ckpts[1]


def test_seed_override_changes_hash(toy_run):
    d, cfg = toy_run
    cli.main(["--config", cfg, "ingest"])
    h1 = json.loads((d / "out" / "manifests" / "ingest.json").read_text())["config_hash"]
    cli.main(["--config", cfg, "--seed", "3", "ingest"])
    h2 = json.loads((d / "out" / "manifests" / "ingest.json").read_text())["config_hash"]
    assert h1 != h2


def test_synth_command(tmp_path):
    assert cli.main(["synth", str(tmp_path / "syn")]) == 0
    assert len((tmp_path / "syn" / "kg.tsv").read_text().splitlines()) == 1490
    assert len((tmp_path / "syn" / "test.jsonl").read_text().splitlines()) == 100


def test_config_rejects_bad_choice(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[clients]\nreader_format = prose\n")
    with pytest.raises(ValueError, match="reader_format"):
        load_config(p)
    p.write_text("[train]\nschedule = index_then_joint\n")
    assert load_config(p).training.schedule == "index_then_joint"
