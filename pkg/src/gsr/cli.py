"""Command-line pipeline. Stages talk to each other only through files in the output dir.

Every stage writes ``manifests/<stage>.json`` with input content hashes, the
config hash, the seed and wall time. A stage whose manifest matches the
current inputs is skipped (``up-to-date``) unless ``--force`` is given.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
import time
from pathlib import Path
from typing import Callable

import torch

from . import evalkit, forge, kg as kgmod, model as gm
from .beam import retrieve
from .clients import (AUTH_ENV_VAR, FunctionChatClient, OpenAIChatClient, repeat_rejecting_selector,
                      terminal_echo_reader)
from .config import PipelineConfig, load_config
from .paths import SubgraphId, execute_chain
from .reader import ask_reader, serialize_paths, serialize_triples

logger = logging.getLogger("gsr")

STAGES = ("ingest", "mine", "filter", "select", "index-data", "train", "retrieve", "read", "eval", "sweep")


class StageError(Exception):
    pass


class Workspace:
    def __init__(self, cfg: PipelineConfig, force: bool = False, threads: int = 1):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.force = force
        self.threads = threads
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifests").mkdir(exist_ok=True)

    def p(self, name: str) -> Path:
        return self.out / name

    # artifact names
    snapshot = property(lambda self: self.p("kg.snapshot"))
    raw = property(lambda self: self.p("retrieval.raw.jsonl"))
    filtered = property(lambda self: self.p("retrieval.filtered.jsonl"))
    selected = property(lambda self: self.p("retrieval.selected.jsonl"))
    indexing = property(lambda self: self.p("indexing.jsonl"))
    checkpoint = property(lambda self: self.p("model.ckpt"))
    training_log = property(lambda self: self.p("training.json"))
    retrieval = property(lambda self: self.p("retrieval.test.jsonl"))
    answers = property(lambda self: self.p("answers.jsonl"))
    metrics = property(lambda self: self.p("metrics.json"))
    sweep = property(lambda self: self.p("sweep.json"))

    def tier_path(self, tier: str) -> Path:
        return {"raw": self.raw, "filtered": self.filtered, "selected": self.selected}[tier]

    def graph(self) -> kgmod.KnowledgeGraph:
        return kgmod.load_snapshot(self.snapshot)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_stage(ws: Workspace, stage: str, inputs: list[Path], outputs: list[Path],
              body: Callable[[], dict | None]) -> str:
    for path in inputs:
        if not Path(path).exists():
            raise StageError(f"{stage}: missing input {path}")
    manifest_path = ws.out / "manifests" / f"{stage}.json"
    key = {
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "config_hash": ws.cfg.hash(),
        "seed": ws.cfg.seed,
    }
    if not ws.force and manifest_path.exists() and all(Path(o).exists() for o in outputs):
        old = json.loads(manifest_path.read_text())
        if {k: old.get(k) for k in key} == key:
            print(f"{stage}: up-to-date")
            return "up-to-date"
    start = time.perf_counter()
    summary = body() or {}
    manifest = {"stage": stage, **key, "outputs": {str(o): _sha256(Path(o)) for o in outputs},
                "wall_time_s": round(time.perf_counter() - start, 3), "summary": summary}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"{stage}: done {json.dumps(summary, sort_keys=True)}")
    return "done"


def _chat_client(cfg: PipelineConfig, which: str):
    c = cfg.clients
    kind = getattr(c, which)
    if kind == "openai":
        model = c.reader_model if which == "reader" and c.reader_model else c.model
        return OpenAIChatClient(c.base_url, model, max_retries=c.max_retries, backoff=c.backoff)
    if which == "selector" and kind == "mock":
        return FunctionChatClient(repeat_rejecting_selector)
    if which == "reader" and kind == "stub":
        return FunctionChatClient(terminal_echo_reader)
    if which == "templates" and kind == "offline":
        return None
    raise StageError(f"unknown {which} client {kind!r}")


# -- stages ---------------------------------------------------------------------

def cmd_ingest(ws: Workspace) -> str:
    def body():
        graph = kgmod.load_tsv(ws.cfg.kg)
        kgmod.save_snapshot(graph, ws.snapshot)
        return {"entities": graph.n_entities, "relations": graph.n_relations, "triples": graph.n_triples}
    return run_stage(ws, "ingest", [Path(ws.cfg.kg)], [ws.snapshot], body)


def cmd_mine(ws: Workspace) -> str:
    def body():
        graph = ws.graph()
        examples = forge.load_examples(ws.cfg.train)
        samples = forge.mine_raw_retrieval(graph, examples, ws.cfg.data.max_hops, ws.threads)
        forge.write_jsonl(ws.raw, (s.to_json() for s in samples))
        stats = forge.data_stats(samples).to_json()
        stats["dropped_examples"] = len(examples) - stats["examples"]
        return stats
    return run_stage(ws, "mine", [ws.snapshot, Path(ws.cfg.train)], [ws.raw], body)


def cmd_filter(ws: Workspace) -> str:
    def body():
        samples = forge.filter_forward_only(forge.load_samples(ws.raw))
        forge.write_jsonl(ws.filtered, (s.to_json() for s in samples))
        return forge.data_stats(samples).to_json()
    return run_stage(ws, "filter", [ws.raw], [ws.filtered], body)


def cmd_select(ws: Workspace) -> str:
    def body():
        client = _chat_client(ws.cfg, "selector")
        try:
            samples = forge.select_with_llm(forge.load_samples(ws.raw), client, ws.cfg.clients.max_in_flight)
        except forge.SelectionAborted as exc:
            partial = ws.p("retrieval.selected.partial.jsonl")
            forge.write_jsonl(partial, (s.to_json() for s in exc.completed))
            raise StageError(f"{exc}; {len(exc.completed)} samples saved to {partial}") from exc
        forge.write_jsonl(ws.selected, (s.to_json() for s in samples))
        return forge.data_stats(samples).to_json()
    return run_stage(ws, "select", [ws.raw], [ws.selected], body)


def cmd_index_data(ws: Workspace) -> str:
    def body():
        graph = ws.graph()
        samples = forge.build_index_corpus(graph, _chat_client(ws.cfg, "templates"),
                                           ws.cfg.data.per_template, ws.cfg.seed)
        forge.write_jsonl(ws.indexing, (s.to_json() for s in samples))
        return {"samples": len(samples), "relations": len({s.relation for s in samples})}
    return run_stage(ws, "index-data", [ws.snapshot], [ws.indexing], body)


def _subsample(samples: list[forge.RetrievalSample], fraction: float, seed: int) -> list[forge.RetrievalSample]:
    if fraction >= 1.0:
        return samples
    ids = sorted({s.example_id for s in samples})
    keep = set(random.Random(seed).sample(ids, max(1, int(round(len(ids) * fraction)))))
    return [s for s in samples if s.example_id in keep]


def cmd_train(ws: Workspace) -> str:
    tier_file = ws.tier_path(ws.cfg.data.train_tier)

    def body():
        graph = ws.graph()
        indexing = [forge.IndexingSample.from_json(o) for o in forge.read_jsonl(ws.indexing)]
        retrieval = _subsample(forge.load_samples(tier_file), ws.cfg.data.subsample, ws.cfg.seed)
        relations = [label for _, label, _ in graph.relation_catalog()]
        vocab = gm.build_vocab(indexing, retrieval, relations, ws.cfg.data.min_freq)
        model = gm.init_model(ws.cfg.model, vocab)
        if ws.cfg.training.schedule == "retrieval_only":
            indexing = []
        model, run = gm.train(model, indexing, retrieval, ws.cfg.training)
        gm.save_checkpoint(model, ws.checkpoint)
        ws.training_log.write_text(json.dumps({"params": run.params(), "epoch_losses": run.epoch_losses,
                                               "loss_curve": run.loss_curve, "consumed": run.consumed}))
        return {"steps": len(run.loss_curve), "final_epoch_loss": run.epoch_losses[-1] if run.epoch_losses else None,
                "consumed": run.consumed, "vocab": len(vocab)}
    return run_stage(ws, "train", [ws.snapshot, ws.indexing, tier_file], [ws.checkpoint, ws.training_log], body)


def cmd_retrieve(ws: Workspace) -> str:
    def body():
        graph, model = ws.graph(), gm.load_checkpoint(ws.checkpoint)
        d = ws.cfg.decode
        rows, empty = [], 0
        for ex in forge.load_examples(ws.cfg.test):
            res = retrieve(model, graph, ex.question, ex.topic_entities, d.k, d.n, d.traversal, ex.id, d.max_hops)
            empty += res.empty
            rows.append(res.to_json())
        forge.write_jsonl(ws.retrieval, rows)
        return {"questions": len(rows), "no_valid_chain": empty}
    return run_stage(ws, "retrieve", [ws.snapshot, ws.checkpoint, Path(ws.cfg.test)], [ws.retrieval], body)


def materialize(graph: kgmod.KnowledgeGraph, row: dict, topics: list[str], traversal: str):
    subgraphs = []
    for chain in row["chains"]:
        if not chain.get("retained"):
            continue
        rel_ids = tuple(graph.resolve(r, "relation") for r in chain["relations"])
        for t in topics:
            e = graph.resolve(t)
            if e is not None:
                sg = execute_chain(graph, SubgraphId(e, rel_ids), traversal)
                if sg.paths:
                    subgraphs.append(sg)
    return subgraphs


def cmd_read(ws: Workspace) -> str:
    def body():
        graph = ws.graph()
        client = _chat_client(ws.cfg, "reader")
        c = ws.cfg.clients
        serialize = serialize_triples if c.reader_format == "triples" else serialize_paths
        examples = {ex.id: ex for ex in forge.load_examples(ws.cfg.test)}
        rows = []
        for row in forge.read_jsonl(ws.retrieval):
            ex = examples[row["id"]]
            rendering = serialize(materialize(graph, row, ex.topic_entities, ws.cfg.decode.traversal),
                                  graph, c.token_budget)
            ans = ask_reader(client, ex.question, rendering)
            rows.append({"id": ex.id, "raw": ans.raw, "answers": ans.answers})
        forge.write_jsonl(ws.answers, rows)
        return {"questions": len(rows)}
    return run_stage(ws, "read", [ws.snapshot, ws.retrieval, Path(ws.cfg.test)], [ws.answers], body)


def metrics_report(ws: Workspace) -> dict:
    graph = ws.graph()
    examples = forge.load_examples(ws.cfg.test)
    by_id = {ex.id: ex for ex in examples}
    retrieved = {r["id"]: r for r in forge.read_jsonl(ws.retrieval)}
    scores = [evalkit.retrieval_metrics(retrieved[ex.id]["terminals"], ex.answers) for ex in examples]
    report = {
        "questions": len(examples),
        "retrieval": evalkit.aggregate(scores),
        "kg_answer_coverage": round(100.0 * evalkit.kg_coverage(graph, examples), 2),
        "k": ws.cfg.decode.k, "n": ws.cfg.decode.n,
    }
    if ws.answers.exists():
        answers = forge.read_jsonl(ws.answers)
        e2e = [evalkit.e2e_metrics(a["answers"], by_id[a["id"]].answers) for a in answers]
        report["end_to_end"] = evalkit.aggregate(e2e)
    return report


def cmd_eval(ws: Workspace) -> str:
    inputs = [ws.snapshot, ws.retrieval, Path(ws.cfg.test)] + ([ws.answers] if ws.answers.exists() else [])

    def body():
        report = metrics_report(ws)
        ws.metrics.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        lines = [f"{'metric':<24}{'value':>10}"]
        for section in ("retrieval", "end_to_end"):
            for key, value in report.get(section, {}).items():
                lines.append(f"{section + '.' + key:<24}{value:>10.2f}")
        ws.p("metrics.txt").write_text("\n".join(lines) + "\n")
        return report["retrieval"]
    return run_stage(ws, "eval", inputs, [ws.metrics], body)


def cmd_sweep(ws: Workspace, strict: bool = True) -> str:
    def body():
        graph, model = ws.graph(), gm.load_checkpoint(ws.checkpoint)
        ks = [int(x) for x in ws.cfg.decode.sweep_ks.split(",") if x.strip()]
        report = evalkit.beam_sweep(model, graph, forge.load_examples(ws.cfg.test), ks, ws.cfg.decode.n,
                                    ws.cfg.decode.traversal, strict)
        ws.sweep.write_text(report.to_json() + "\n")
        ws.p("sweep.txt").write_text(report.table() + "\n")
        print(report.table())
        return {"rows": len(report.rows), "superset_violations": len(report.superset_violations)}
    return run_stage(ws, "sweep", [ws.snapshot, ws.checkpoint, Path(ws.cfg.test)], [ws.sweep], body)


PIPELINE = (cmd_ingest, cmd_mine, cmd_filter, cmd_select, cmd_index_data, cmd_train, cmd_retrieve, cmd_read, cmd_eval)


def run_pipeline(ws: Workspace) -> None:
    for stage in PIPELINE:
        stage(ws)


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsr", description="Generative subgraph retrieval pipeline")
    ap.add_argument("--config", help="INI config file (see README)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--force", action="store_true", help="re-run stages even if up-to-date")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sp = sub.add_parser(name)
        if name == "sweep":
            sp.add_argument("--no-strict", action="store_true", help="report k-superset violations without failing")
    sub.add_parser("pipeline", help="run ingest through eval")
    sp = sub.add_parser("synth", help="write the synthetic KG and question files")
    sp.add_argument("directory")
    sp = sub.add_parser("serve", help="serve retrieval over HTTP from a finished output dir")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8080)
    sp = sub.add_parser("query", help="ask a running server to retrieve for one question")
    sp.add_argument("--server", default="http://127.0.0.1:8080")
    sp.add_argument("--topic", action="append", required=True)
    sp.add_argument("question")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "query":
            return _query(args)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.apply_seed(args.seed)
        if args.out:
            cfg.out = args.out
        if args.command == "synth":
            from .synthetic import make_corpus
            paths = make_corpus(cfg.seed).write(args.directory)
            print(json.dumps({k: str(v) for k, v in paths.items()}))
            return 0
        torch.set_num_threads(max(1, args.threads))
        ws = Workspace(cfg, args.force, args.threads)
        if args.command == "serve":
            return _serve(ws, args)
        if args.command == "pipeline":
            run_pipeline(ws)
        elif args.command == "sweep":
            cmd_sweep(ws, strict=not args.no_strict)
        else:
            globals()["cmd_" + args.command.replace("-", "_")](ws)
    except (StageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (kgmod.KGError, forge.ForgeError, gm.ModelError, evalkit.EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _serve(ws: Workspace, args) -> int:
    import uvicorn

    from .api import create_app

    reader = _chat_client(ws.cfg, "reader")
    app = create_app(ws.graph(), gm.load_checkpoint(ws.checkpoint), reader, ws.cfg.decode)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _query(args) -> int:
    import httpx

    resp = httpx.post(args.server.rstrip("/") + "/retrieve",
                      json={"question": args.question, "topic_entities": args.topic}, timeout=60)
    resp.raise_for_status()
    print(json.dumps(resp.json(), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
