"""Pipeline configuration: an INI-style key=value file read with configparser.

Example::

    [run]
    kg = data/kg.tsv
    train = data/train.jsonl
    test = data/test.jsonl
    out = runs/demo
    seed = 0

    [train]
    schedule = joint
    epochs = 60
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import SCHEDULES, ModelConfig, TrainingRun


@dataclass
class DecodeConfig:
    k: int = 10
    n: int = 3
    max_hops: int = 4
    traversal: str = "bidirectional"
    sweep_ks: str = "3,10"


@dataclass
class ClientConfig:
    selector: str = "mock"          # mock | openai
    templates: str = "offline"      # offline | openai
    reader: str = "stub"            # stub | openai
    base_url: str = "http://localhost:8000/v1"
    model: str = "gpt-4-turbo-preview"
    reader_model: str = ""
    max_retries: int = 3
    backoff: float = 1.0
    max_in_flight: int = 4
    reader_format: str = "paths"  # paths | triples
    token_budget: int = 4096


@dataclass
class DataConfig:
    max_hops: int = 2
    train_tier: str = "selected"    # raw | filtered | selected
    subsample: float = 1.0
    per_template: int = 1
    min_freq: int = 1


@dataclass
class PipelineConfig:
    kg: str = "kg.tsv"
    train: str = "train.jsonl"
    test: str = "test.jsonl"
    out: str = "out"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingRun = field(default_factory=TrainingRun)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    clients: ClientConfig = field(default_factory=ClientConfig)

    def apply_seed(self, seed: int) -> None:
        self.seed = seed
        self.model.seed = seed
        self.training.seed = seed

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("kg", "train", "test", "out", "seed")}
        d.update(data=asdict(self.data), model=asdict(self.model), training=self.training.params(),
                 decode=asdict(self.decode), clients=asdict(self.clients))
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_CHOICES = {
    ("data", "train_tier"): ("raw", "filtered", "selected"),
    ("training", "schedule"): SCHEDULES,
    ("training", "optimizer"): ("adam", "sgd"),
    ("decode", "traversal"): ("forward_only", "bidirectional"),
    ("clients", "selector"): ("mock", "openai"),
    ("clients", "templates"): ("offline", "openai"),
    ("clients", "reader"): ("stub", "openai"),
    ("clients", "reader_format"): ("paths", "triples"),
}

_SECTIONS = {"data": "data", "model": "model", "train": "training", "decode": "decode", "clients": "clients"}


def _coerce(target, key: str, raw: str):
    for f in fields(target):
        if f.name == key:
            current = getattr(target, key)
            if isinstance(current, bool):
                return raw.strip().lower() in ("1", "true", "yes", "on")
            if isinstance(current, int):
                return int(raw)
            if isinstance(current, float) or (f.type and "float" in str(f.type)):
                return None if raw.strip().lower() in ("", "none") else float(raw)
            return raw.strip()
    raise KeyError(f"unknown config key {key!r} for {type(target).__name__}")


def load_config(path: str | Path | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    base = Path(path).parent
    if parser.has_section("run"):
        for key in ("kg", "train", "test", "out"):
            if parser.has_option("run", key):
                value = Path(parser.get("run", key))
                setattr(cfg, key, str(value if value.is_absolute() else base / value))
    if parser.has_section("run") and parser.has_option("run", "seed"):
        cfg.apply_seed(parser.getint("run", "seed"))
    for section, attr in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        target = getattr(cfg, attr)
        for key, raw in parser.items(section):
            value = _coerce(target, key, raw)
            allowed = _CHOICES.get((attr, key))
            if allowed and value not in allowed:
                raise ValueError(f"[{section}] {key} must be one of {', '.join(allowed)}, got {value!r}")
            setattr(target, key, value)
    return cfg
