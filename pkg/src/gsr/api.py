"""HTTP service over a trained model and KG snapshot.

The app is built from in-memory objects, so tests can drive it with
``fastapi.testclient`` and ``gsr serve`` can load them from a run directory.
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .beam import RetrievalError, retrieve
from .clients import ChatClient, ChatError
from .config import DecodeConfig
from .evalkit import aggregate, e2e_metrics, retrieval_metrics
from .kg import KnowledgeGraph
from .model import GsrModel
from .reader import ask_reader, serialize_paths, serialize_triples


class RetrieveRequest(BaseModel):
    question: str
    topic_entities: list[str] = Field(min_length=1)
    k: int | None = Field(default=None, ge=1)
    n: int | None = Field(default=None, ge=1)
    traversal: str | None = None


class ChainOut(BaseModel):
    relations: list[str]
    score: float
    valid: bool
    retained: bool


class RetrieveResponse(BaseModel):
    chains: list[ChainOut]
    terminals: list[str]
    dropped_invalid: int


class SerializeRequest(RetrieveRequest):
    format: str = Field(default="paths", pattern="^(paths|triples)$")
    token_budget: int = Field(default=4096, ge=1)


class SerializeResponse(BaseModel):
    format: str
    lines: list[str]
    truncated_lines: int


class AnswerResponse(BaseModel):
    answers: list[str]
    raw: str
    context: SerializeResponse


class ScoreRequest(BaseModel):
    predicted: list[list[str]]
    gold: list[list[str]]


class Health(BaseModel):
    status: str
    version: str
    entities: int
    relations: int
    triples: int


def create_app(graph: KnowledgeGraph, model: GsrModel, reader: ChatClient | None = None,
               decode: DecodeConfig | None = None) -> FastAPI:
    decode = decode or DecodeConfig()
    app = FastAPI(title="gsr", version=__version__)

    def _retrieve(req: RetrieveRequest):
        try:
            return retrieve(model, graph, req.question, req.topic_entities, req.k or decode.k,
                            req.n or decode.n, req.traversal or decode.traversal, max_hops=decode.max_hops)
        except (RetrievalError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    def _render(req: SerializeRequest):
        fn = serialize_triples if req.format == "triples" else serialize_paths
        return fn(_retrieve(req).subgraphs, graph, req.token_budget)

    def _out(r) -> SerializeResponse:
        return SerializeResponse(format=r.format, lines=r.lines, truncated_lines=r.truncated_lines)

    @app.get("/health", response_model=Health)
    def health():
        return Health(status="ok", version=__version__, entities=graph.n_entities,
                      relations=graph.n_relations, triples=graph.n_triples)

    @app.post("/retrieve", response_model=RetrieveResponse)
    def retrieve_route(req: RetrieveRequest):
        res = _retrieve(req)
        chains = [ChainOut(relations=list(c.relations), score=c.score, valid=c.valid, retained=c.retained)
                  for c in res.candidates]
        return RetrieveResponse(chains=chains, terminals=res.terminals, dropped_invalid=res.dropped_invalid)

    @app.post("/serialize", response_model=SerializeResponse)
    def serialize_route(req: SerializeRequest):
        return _out(_render(req))

    @app.post("/answer", response_model=AnswerResponse)
    def answer_route(req: SerializeRequest):
        if reader is None:
            raise HTTPException(status_code=503, detail="no reader configured")
        rendering = _render(req)
        try:
            ans = ask_reader(reader, req.question, rendering)
        except ChatError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        return AnswerResponse(answers=ans.answers, raw=ans.raw, context=_out(rendering))

    @app.post("/metrics/retrieval")
    def retrieval_score(req: ScoreRequest) -> dict[str, float]:
        return _score(retrieval_metrics, req)

    @app.post("/metrics/e2e")
    def e2e_score(req: ScoreRequest) -> dict[str, float]:
        return _score(e2e_metrics, req)

    return app


def _score(fn, req: ScoreRequest) -> dict[str, float]:
    if len(req.predicted) != len(req.gold) or not req.gold:
        raise HTTPException(status_code=422, detail="predicted and gold must be non-empty and equally long")
    try:
        return aggregate([fn(p, g) for p, g in zip(req.predicted, req.gold)])
    except Exception as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
