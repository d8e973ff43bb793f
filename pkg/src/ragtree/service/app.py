"""FastAPI application exposing the service operations under /v1."""

from __future__ import annotations

from fastapi import FastAPI

from . import ops, schemas


def create_app() -> FastAPI:
    app = FastAPI(
        title="ragtree",
        description=(
            "Solution design engine service: ingest benchmark datasets, build "
            "retrieval indexes, grow design/review trees, and judge the results."
        ),
    )

    @app.get("/v1/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return ops.health()

    @app.post("/v1/ingest", response_model=schemas.IngestResponse)
    def ingest(req: schemas.IngestRequest) -> schemas.IngestResponse:
        return ops.ingest(req)

    @app.post("/v1/index", response_model=schemas.IndexResponse)
    def build_index(req: schemas.IndexRequest) -> schemas.IndexResponse:
        return ops.build_index(req)

    @app.post("/v1/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest) -> schemas.RunResponse:
        return ops.run(req)

    @app.post("/v1/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
        return ops.evaluate(req)

    @app.post("/v1/analyze", response_model=schemas.AnalyzeResponse)
    def analyze(req: schemas.AnalyzeRequest) -> schemas.AnalyzeResponse:
        return ops.analyze(req)

    @app.post("/v1/stats", response_model=schemas.StatsResponse)
    def stats(req: schemas.StatsRequest) -> schemas.StatsResponse:
        return ops.stats(req)

    return app
