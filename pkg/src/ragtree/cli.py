"""Command-line client for the ragtree service.

Every subcommand marshals its flags into a service request model and
dispatches it either in-process (default) or to a remote service over HTTP
(`--server URL`); both paths run the same operation code. Configuration
precedence is flags > config file > environment > defaults.

Exit codes: 0 success, 1 validation/configuration error, 2 partial run.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from .service import ops, schemas

_EXIT_BY_STATUS = {"ok": 0, "error": 1, "partial": 2}


class LocalClient:
    def call(self, op_name: str, request):
        return getattr(ops, op_name)(request)


class HttpClient:
    """Thin HTTP client; request/response models mirror the local path."""

    _ROUTES = {
        "ingest": "/v1/ingest",
        "build_index": "/v1/index",
        "run": "/v1/run",
        "evaluate": "/v1/evaluate",
        "analyze": "/v1/analyze",
        "stats": "/v1/stats",
    }
    _RESPONSES = {
        "ingest": schemas.IngestResponse,
        "build_index": schemas.IndexResponse,
        "run": schemas.RunResponse,
        "evaluate": schemas.EvaluateResponse,
        "analyze": schemas.AnalyzeResponse,
        "stats": schemas.StatsResponse,
    }

    def __init__(self, base_url: str):
        self._client = httpx.Client(base_url=base_url, timeout=None)

    def call(self, op_name: str, request):
        response = self._client.post(self._ROUTES[op_name], json=request.model_dump())
        response.raise_for_status()
        return self._RESPONSES[op_name].model_validate(response.json())


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _section(config_file: dict, name: str, flag_values: dict) -> dict:
    merged = dict(config_file.get(name, {}))
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def _engine_overrides(args, config_file: dict) -> dict:
    return _section(
        config_file,
        "engine",
        {
            "max_depth": args.max_depth,
            "children_per_node": args.children,
            "beam_width": args.beam_width,
            "retrieval_count": args.retrieval_count,
            "temperature": args.temperature,
            "max_tokens": args.max_tokens,
            "seed": args.seed,
            "mode": args.mode,
            "max_workers": args.max_workers,
        },
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--server", help="remote service URL (default: run in-process)")
    parser.add_argument("--config", help="JSON config file with engine/backend/embedding/judge sections")
    parser.add_argument("--mock", help="scripted mock backend file for offline runs")


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-depth", "-L", type=int, help="tree depth (odd, default 5)")
    parser.add_argument("--children", "-H", type=int, help="children per node (default 2)")
    parser.add_argument("--beam-width", "-W", type=int, help="retained nodes per layer (default 1)")
    parser.add_argument("--retrieval-count", "-R", type=int, help="retrieved items per proposal (default 10)")
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--max-tokens", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument(
        "--mode", choices=["full", "no_tree", "no_bipoint", "naive_rag"], help="growth/baseline mode"
    )
    parser.add_argument("--max-workers", type=int, help="parallel expansions within a layer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragtree", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset, write knowledge base + stats files")
    p.add_argument("dataset")
    p.add_argument("--out", "-o", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("index", help="embed a knowledge base into a vector index file")
    p.add_argument("kb")
    p.add_argument("--out", "-o", help="index output path (default: <kb>.index.npz)")
    p.add_argument("--cache-dir", help="embedding cache directory")
    p.add_argument("--embed-base-url")
    p.add_argument("--embed-model")
    p.add_argument("--batch-size", type=int)
    _add_common(p)

    p = sub.add_parser("run", help="grow solutions for a dataset or one requirement")
    p.add_argument("dataset", nargs="?", help="dataset file (omit when using --requirement)")
    p.add_argument("--requirement", help="run a single ad-hoc requirement")
    p.add_argument("--kb", help="knowledge base file")
    p.add_argument("--index", dest="index_path", help="prebuilt vector index file")
    p.add_argument("--out", "-o", required=True, help="run directory")
    p.add_argument("--jobs", type=int, default=1, help="datapoint-level parallelism")
    p.add_argument("--limit", type=int, help="run only the first N datapoints")
    p.add_argument("--cache-dir", help="embedding cache directory")
    p.add_argument("--base-url", help="model endpoint URL")
    p.add_argument("--model", help="model name")
    p.add_argument("--max-retries", type=int, help="gateway retries per call")
    p.add_argument(
        "--judge-fallback", action="store_true",
        help="score via rated agreement when the backend lacks logprob echo",
    )
    _add_engine_flags(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="judge run outputs against their datapoints")
    p.add_argument("runs_dir")
    p.add_argument("--dataset", required=True)
    p.add_argument("--judge-base-url")
    p.add_argument("--judge-model")
    p.add_argument("--parse-retries", type=int, default=2)
    _add_common(p)

    p = sub.add_parser("analyze", help="trace analytics over a finished run")
    p.add_argument("runs_dir")
    p.add_argument("--dataset", required=True)
    p.add_argument("--analysis", choices=["layers", "pruning"], default="layers")
    p.add_argument("--judge-base-url")
    p.add_argument("--judge-model")
    p.add_argument("--parse-retries", type=int, default=2)
    _add_common(p)

    p = sub.add_parser("stats", help="dataset and knowledge-base sizes per domain")
    p.add_argument("dataset")
    _add_common(p)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8100)

    return parser


def _client(args) -> LocalClient | HttpClient:
    return HttpClient(args.server) if getattr(args, "server", None) else LocalClient()


def _dispatch(args) -> int:
    config_file = _load_config_file(getattr(args, "config", None))
    client = _client(args)

    if args.command == "ingest":
        resp = client.call("ingest", schemas.IngestRequest(dataset_path=args.dataset, out_dir=args.out))
        if resp.status == "ok":
            for row in resp.stats:
                print(f"{row.domain}: {row.datapoint_count} datapoints, {row.knowledge_count} knowledge items")
            print(f"wrote {', '.join(resp.kb_paths)} and {resp.stats_path}")

    elif args.command == "index":
        embedding = _section(
            config_file,
            "embedding",
            {"base_url": args.embed_base_url, "model": args.embed_model, "batch_size": args.batch_size},
        )
        resp = client.call(
            "build_index",
            schemas.IndexRequest(
                kb_path=args.kb,
                out_path=args.out,
                cache_dir=args.cache_dir,
                embedding=embedding,
                mock_script=args.mock,
            ),
        )
        if resp.status == "ok":
            print(f"indexed {resp.item_count} items (dim {resp.dimension}) -> {resp.index_path}")

    elif args.command == "run":
        backend = _section(
            config_file,
            "backend",
            {"base_url": args.base_url, "model": args.model, "max_retries": args.max_retries},
        )
        resp = client.call(
            "run",
            schemas.RunRequest(
                dataset_path=args.dataset,
                requirement=args.requirement,
                kb_path=args.kb,
                index_path=args.index_path,
                out_dir=args.out,
                engine=_engine_overrides(args, config_file),
                backend=backend,
                embedding=config_file.get("embedding", {}),
                cache_dir=args.cache_dir,
                mock_script=args.mock,
                jobs=args.jobs,
                limit=args.limit,
                judge_fallback=args.judge_fallback,
            ),
        )
        if resp.status != "error":
            print(f"run {resp.run_id}: {len(resp.completed)} completed, {len(resp.skipped)} skipped")
            for item_id, error in sorted(resp.failed.items()):
                print(f"FAILED {item_id}: {error}", file=sys.stderr)

    elif args.command == "evaluate":
        judge = _section(
            config_file, "judge", {"base_url": args.judge_base_url, "model": args.judge_model}
        )
        resp = client.call(
            "evaluate",
            schemas.EvaluateRequest(
                runs_dir=args.runs_dir,
                dataset_path=args.dataset,
                judge=judge,
                parse_retries=args.parse_retries,
                mock_script=args.mock,
            ),
        )
        if resp.status == "ok":
            print(resp.table)
            unscored = resp.report.get("unscored_ids", [])
            if unscored:
                print(f"unscored datapoints: {', '.join(unscored)}", file=sys.stderr)
            print(f"report written to {resp.report_path}")

    elif args.command == "analyze":
        judge = _section(
            config_file, "judge", {"base_url": args.judge_base_url, "model": args.judge_model}
        )
        resp = client.call(
            "analyze",
            schemas.AnalyzeRequest(
                runs_dir=args.runs_dir,
                dataset_path=args.dataset,
                analysis=args.analysis,
                judge=judge,
                parse_retries=args.parse_retries,
                mock_script=args.mock,
            ),
        )
        if resp.status == "ok":
            print(resp.table)
            print(f"analysis written to {resp.out_path}")

    elif args.command == "stats":
        resp = client.call("stats", schemas.StatsRequest(dataset_path=args.dataset))
        if resp.status == "ok":
            print(f"{'domain':<20} {'datapoints':>11} {'knowledge':>10}")
            for row in resp.rows:
                print(f"{row.domain:<20} {row.datapoint_count:>11} {row.knowledge_count:>10}")

    else:
        raise ValueError(f"unknown command {args.command}")

    if resp.status == "error":
        print(f"error: {resp.message}", file=sys.stderr)
    return _EXIT_BY_STATUS[resp.status]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    try:
        return _dispatch(args)
    except httpx.HTTPError as exc:
        print(f"error: service request failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
