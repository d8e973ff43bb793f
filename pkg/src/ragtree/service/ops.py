"""Service operations: the single implementation behind both the HTTP routes
and the CLI's local mode.

Backend, embedding, and judge settings resolve in three layers: explicit
request overrides, then environment variables, then dataclass defaults.
Passing `mock_script` swaps both the LLM and the embedder for their scripted
mocks while keeping gateway retry policy intact.
"""

from __future__ import annotations

import json
import os
from dataclasses import fields as dataclass_fields
from pathlib import Path

from .. import __version__
from ..bench import (
    Datapoint,
    DatasetError,
    build_knowledge_base,
    compute_stats,
    load_dataset,
    load_kb,
    save_kb,
)
from ..engine import EngineConfig
from ..evaluator import Judge, evaluate_runs, layer_analysis, pruned_vs_retained
from ..gateway import BackendConfig, GatewayError, LLMGateway
from ..mock import MockEmbedder, MockLLMBackend, MockScript
from ..retrieval import (
    CachingEmbedder,
    EmbeddingConfig,
    HttpEmbedder,
    RetrievalError,
    VectorIndex,
    load_index,
    save_index,
)
from ..runner import RunManifest, run_items
from ..trace import TraceError, load_traces
from . import schemas

_OP_ERRORS = (
    DatasetError,
    RetrievalError,
    GatewayError,
    TraceError,
    ValueError,
    FileNotFoundError,
    json.JSONDecodeError,
)

_ENV_BACKEND = {"base_url": "RAGTREE_BASE_URL", "model": "RAGTREE_MODEL"}
_ENV_EMBEDDING = {"base_url": "RAGTREE_EMBED_BASE_URL", "model": "RAGTREE_EMBED_MODEL"}
_ENV_JUDGE = {"base_url": "RAGTREE_JUDGE_BASE_URL", "model": "RAGTREE_JUDGE_MODEL"}


def _resolve(config_cls, overrides: dict, env_map: dict[str, str]):
    known = {f.name for f in dataclass_fields(config_cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown {config_cls.__name__} keys: {sorted(unknown)}")
    merged = dict(overrides)
    for name, env_var in env_map.items():
        if name not in merged and os.environ.get(env_var):
            merged[name] = os.environ[env_var]
    return config_cls(**merged)


def build_gateway(
    backend_overrides: dict,
    mock_script: str | None,
    env_map: dict[str, str] | None = None,
    judge_fallback: bool = False,
) -> LLMGateway:
    config = _resolve(BackendConfig, backend_overrides, env_map or _ENV_BACKEND)
    backend = MockLLMBackend(MockScript.load(mock_script)) if mock_script else None
    return LLMGateway.from_config(config, backend=backend, judge_fallback=judge_fallback)


def build_embedder(embedding_overrides: dict, mock_script: str | None, cache_dir: str | None):
    if mock_script:
        embedder = MockEmbedder(MockScript.load(mock_script))
    else:
        embedder = HttpEmbedder(_resolve(EmbeddingConfig, embedding_overrides, _ENV_EMBEDDING))
    if cache_dir:
        embedder = CachingEmbedder(embedder, cache_dir)
    return embedder


def _build_request_index(req: "schemas.RunRequest"):
    if not req.kb_path:
        return None
    kb = load_kb(req.kb_path)
    embedder = build_embedder(req.embedding, req.mock_script, req.cache_dir)
    if req.index_path and Path(req.index_path).exists():
        return load_index(req.index_path, kb, embedder)
    return VectorIndex.build(kb, embedder)


def _group_by_domain(datapoints: list[Datapoint]) -> dict[str, list[Datapoint]]:
    groups: dict[str, list[Datapoint]] = {}
    for dp in datapoints:
        groups.setdefault(dp.domain, []).append(dp)
    return groups


def ingest(req: schemas.IngestRequest) -> schemas.IngestResponse:
    """Validate a dataset and write its knowledge base(s) and stats file."""
    try:
        datapoints = load_dataset(req.dataset_path)
        if not datapoints:
            raise DatasetError("dataset is empty")
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        kb_paths = []
        rows = []
        for domain, group in sorted(_group_by_domain(datapoints).items()):
            kb = build_knowledge_base(group)
            kb_path = out_dir / f"kb_{domain}.jsonl"
            save_kb(kb, kb_path)
            kb_paths.append(str(kb_path))
            stats = compute_stats(group, kb)
            rows.append(schemas.StatsRow(**stats.to_dict()))
        stats_path = out_dir / "stats.json"
        stats_path.write_text(
            json.dumps([r.model_dump() for r in rows], sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    except _OP_ERRORS as exc:
        return schemas.IngestResponse(status="error", message=str(exc))
    return schemas.IngestResponse(
        status="ok", kb_paths=kb_paths, stats_path=str(stats_path), stats=rows
    )


def build_index(req: schemas.IndexRequest) -> schemas.IndexResponse:
    """Embed every knowledge item and persist the vectors next to the KB."""
    try:
        kb = load_kb(req.kb_path)
        embedder = build_embedder(req.embedding, req.mock_script, req.cache_dir)
        index = VectorIndex.build(kb, embedder)
        out_path = req.out_path or str(Path(req.kb_path).with_suffix(".index.npz"))
        save_index(index, out_path)
    except _OP_ERRORS as exc:
        return schemas.IndexResponse(status="error", message=str(exc))
    return schemas.IndexResponse(
        status="ok",
        index_path=out_path,
        item_count=len(index),
        dimension=int(index.matrix.shape[1]) if len(index) else 0,
    )


def run(req: schemas.RunRequest) -> schemas.RunResponse:
    """Run the engine (or a baseline mode) over a dataset or one requirement.

    Resumable: datapoints already marked done in the manifest are skipped.
    Per-datapoint failures do not stop the run; they yield status "partial".
    """
    try:
        if bool(req.dataset_path) == bool(req.requirement):
            raise ValueError("provide exactly one of dataset_path or requirement")
        if req.jobs < 1:
            raise ValueError("jobs must be >= 1")
        config = EngineConfig.from_dict(req.engine)
        if req.dataset_path:
            datapoints = load_dataset(req.dataset_path)
            if req.limit is not None:
                datapoints = datapoints[: req.limit]
            items = [(dp.id, dp.requirement) for dp in datapoints]
        else:
            items = [("adhoc-0001", req.requirement)]
        if not items:
            raise ValueError("nothing to run: dataset is empty")
        gateway = build_gateway(req.backend, req.mock_script, judge_fallback=req.judge_fallback)
        index = _build_request_index(req)
        outcome = run_items(
            items,
            gateway=gateway,
            index=index,
            config=config,
            out_dir=req.out_dir,
            jobs=req.jobs,
            dataset_path=req.dataset_path,
            kb_path=req.kb_path,
            mock_script=req.mock_script,
            backend_info={k: v for k, v in req.backend.items() if "key" not in k},
        )
    except _OP_ERRORS as exc:
        return schemas.RunResponse(status="error", message=str(exc))
    if outcome.failed:
        named = ", ".join(sorted(outcome.failed))
        message = f"{len(outcome.failed)} datapoint(s) failed: {named}"
        status = "partial"
    else:
        message = f"{len(outcome.completed)} completed, {len(outcome.skipped)} skipped"
        status = "ok"
    return schemas.RunResponse(
        status=status,
        message=message,
        run_id=outcome.run_id,
        out_dir=outcome.out_dir,
        completed=outcome.completed,
        skipped=outcome.skipped,
        failed=outcome.failed,
    )


def _load_run_solutions(runs_dir: Path) -> dict[str, str]:
    solutions_dir = runs_dir / "solutions"
    if not solutions_dir.is_dir():
        raise FileNotFoundError(f"no solutions directory under {runs_dir}")
    solutions = {
        path.stem: path.read_text(encoding="utf-8") for path in sorted(solutions_dir.glob("*.txt"))
    }
    if not solutions:
        raise FileNotFoundError(f"no run outputs found under {solutions_dir}")
    return solutions


def _run_mode(runs_dir: Path) -> str:
    try:
        return RunManifest.load(runs_dir).mode
    except FileNotFoundError:
        return "unknown"


def evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    """Judge run outputs against their datapoints and write the report."""
    try:
        runs_dir = Path(req.runs_dir)
        solutions = _load_run_solutions(runs_dir)
        dataset = load_dataset(req.dataset_path)
        gateway = build_gateway(req.judge, req.mock_script, env_map=_ENV_JUDGE)
        judge = Judge(gateway, parse_retries=req.parse_retries)
        report = evaluate_runs(solutions, dataset, judge, mode=_run_mode(runs_dir))
        report_path = runs_dir / "report.json"
        report.save(report_path)
        (runs_dir / "report.txt").write_text(report.table() + "\n", encoding="utf-8")
    except _OP_ERRORS as exc:
        return schemas.EvaluateResponse(status="error", message=str(exc))
    return schemas.EvaluateResponse(
        status="ok",
        report_path=str(report_path),
        table=report.table(),
        report=report.to_dict(),
    )


def analyze(req: schemas.AnalyzeRequest) -> schemas.AnalyzeResponse:
    """Run a trace analysis: per-layer score progression or pruning quality."""
    try:
        runs_dir = Path(req.runs_dir)
        traces = load_traces(runs_dir / "traces")
        if not traces:
            raise FileNotFoundError(f"no traces under {runs_dir / 'traces'}")
        dataset = load_dataset(req.dataset_path)
        gateway = build_gateway(req.judge, req.mock_script, env_map=_ENV_JUDGE)
        judge = Judge(gateway, parse_retries=req.parse_retries)
        if req.analysis == "layers":
            rows = layer_analysis(traces, dataset, judge)
            result = {
                "rows": [r.to_dict() for r in rows],
                "plot_data": [[r.layer, r.overall_mean] for r in rows],
            }
            lines = [f"{'layer':>5} {'AS':>8} {'TS':>8} {'overall':>8} {'count':>6}"]
            for r in rows:
                lines.append(
                    f"{r.layer:>5} {_fmt(r.analytical_mean):>8} {_fmt(r.technical_mean):>8} "
                    f"{_fmt(r.overall_mean):>8} {r.count:>6}"
                )
            table = "\n".join(lines)
        else:
            result = pruned_vs_retained(traces, dataset, judge)
            table = (
                f"retained mean: {_fmt(result['retained_mean'])}\n"
                f"pruned mean:   {_fmt(result['pruned_mean'])}"
                + ("\n(no pruning occurred in these traces)" if result["no_pruning"] else "")
            )
        out_path = runs_dir / f"analysis_{req.analysis}.json"
        out_path.write_text(
            json.dumps(result, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    except _OP_ERRORS as exc:
        return schemas.AnalyzeResponse(status="error", message=str(exc))
    return schemas.AnalyzeResponse(status="ok", result=result, table=table, out_path=str(out_path))


def stats(req: schemas.StatsRequest) -> schemas.StatsResponse:
    """Dataset and knowledge-base sizes per domain, without writing files."""
    try:
        datapoints = load_dataset(req.dataset_path)
        if not datapoints:
            raise DatasetError("dataset is empty")
        rows = []
        for domain, group in sorted(_group_by_domain(datapoints).items()):
            kb = build_knowledge_base(group)
            rows.append(schemas.StatsRow(**compute_stats(group, kb).to_dict()))
    except _OP_ERRORS as exc:
        return schemas.StatsResponse(status="error", message=str(exc))
    return schemas.StatsResponse(status="ok", rows=rows)


def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(version=__version__)


def _fmt(value: float | None) -> str:
    return f"{value:.1f}" if value is not None else "-"
