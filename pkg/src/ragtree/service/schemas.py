"""Pydantic request/response models for every service operation.

Operations report their outcome in the `status` field: "ok", "error"
(validation or configuration problem), or "partial" (a run where some
datapoints failed). The CLI maps these to exit codes 0, 1, and 2.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    service: str = "ragtree"
    version: str


class StatsRow(BaseModel):
    domain: str
    datapoint_count: int
    knowledge_count: int


class IngestRequest(BaseModel):
    dataset_path: str
    out_dir: str


class IngestResponse(BaseModel):
    status: Literal["ok", "error"]
    message: str = ""
    kb_paths: list[str] = Field(default_factory=list)
    stats_path: str | None = None
    stats: list[StatsRow] = Field(default_factory=list)


class IndexRequest(BaseModel):
    kb_path: str
    out_path: str | None = None
    cache_dir: str | None = None
    embedding: dict = Field(default_factory=dict)
    mock_script: str | None = None


class IndexResponse(BaseModel):
    status: Literal["ok", "error"]
    message: str = ""
    index_path: str | None = None
    item_count: int = 0
    dimension: int = 0


class RunRequest(BaseModel):
    dataset_path: str | None = None
    requirement: str | None = None
    kb_path: str | None = None
    index_path: str | None = None
    out_dir: str
    engine: dict = Field(default_factory=dict)
    backend: dict = Field(default_factory=dict)
    embedding: dict = Field(default_factory=dict)
    cache_dir: str | None = None
    mock_script: str | None = None
    jobs: int = 1
    limit: int | None = None
    judge_fallback: bool = False  # rated-agreement scoring for backends without logprobs


class RunResponse(BaseModel):
    status: Literal["ok", "partial", "error"]
    message: str = ""
    run_id: str | None = None
    out_dir: str | None = None
    completed: list[str] = Field(default_factory=list)
    skipped: list[str] = Field(default_factory=list)
    failed: dict[str, str] = Field(default_factory=dict)


class EvaluateRequest(BaseModel):
    runs_dir: str
    dataset_path: str
    judge: dict = Field(default_factory=dict)
    parse_retries: int = 2
    mock_script: str | None = None


class EvaluateResponse(BaseModel):
    status: Literal["ok", "error"]
    message: str = ""
    report_path: str | None = None
    table: str = ""
    report: dict = Field(default_factory=dict)


class AnalyzeRequest(BaseModel):
    runs_dir: str
    dataset_path: str
    analysis: Literal["layers", "pruning"]
    judge: dict = Field(default_factory=dict)
    parse_retries: int = 2
    mock_script: str | None = None


class AnalyzeResponse(BaseModel):
    status: Literal["ok", "error"]
    message: str = ""
    result: dict | list = Field(default_factory=dict)
    table: str = ""
    out_path: str | None = None


class StatsRequest(BaseModel):
    dataset_path: str


class StatsResponse(BaseModel):
    status: Literal["ok", "error"]
    message: str = ""
    rows: list[StatsRow] = Field(default_factory=list)
