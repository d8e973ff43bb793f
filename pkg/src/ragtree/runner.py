"""Batch execution over datasets: run directories, manifests, resumability.

A run directory is keyed by a deterministic run id and holds everything the
evaluator needs:

    out_dir/
      manifest.json        run config + per-datapoint status (has timestamps)
      traces/<id>.json     one growth trace per datapoint (timestamp-free)
      solutions/<id>.txt   final solution text per datapoint

Re-invoking over the same directory skips datapoints already marked done and
retries failed ones.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import run_naive_rag
from .engine import EngineConfig, GrowthAborted, TreeEngine
from .gateway import GatewayError, LLMGateway
from .retrieval import VectorIndex

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    run_id: str
    mode: str
    config: dict
    dataset_path: str | None = None
    kb_path: str | None = None
    mock_script: str | None = None
    backend: dict = field(default_factory=dict)
    created_at: float = 0.0
    updated_at: float = 0.0
    statuses: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "mode": self.mode,
            "config": self.config,
            "dataset_path": self.dataset_path,
            "kb_path": self.kb_path,
            "mock_script": self.mock_script,
            "backend": self.backend,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "statuses": self.statuses,
        }

    def save(self, out_dir: str | Path) -> None:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, out_dir: str | Path) -> "RunManifest":
        data = json.loads((Path(out_dir) / MANIFEST_NAME).read_text(encoding="utf-8"))
        return cls(**data)


@dataclass
class RunOutcome:
    run_id: str
    out_dir: str
    completed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 2 if self.failed else 0


def compute_run_id(items: list[tuple[str, str]], config: EngineConfig, mock_script: str | None) -> str:
    digest = hashlib.sha256()
    for item_id, requirement in items:
        digest.update(item_id.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(requirement.encode("utf-8"))
        digest.update(b"\x1e")
    digest.update(json.dumps(config.to_dict(), sort_keys=True).encode("utf-8"))
    digest.update((mock_script or "").encode("utf-8"))
    return digest.hexdigest()[:12]


def run_items(
    items: list[tuple[str, str]],
    gateway: LLMGateway,
    index: VectorIndex | None,
    config: EngineConfig,
    out_dir: str | Path,
    jobs: int = 1,
    dataset_path: str | None = None,
    kb_path: str | None = None,
    mock_script: str | None = None,
    backend_info: dict | None = None,
) -> RunOutcome:
    """Execute (id, requirement) pairs, writing one trace and solution per
    item. A backend failure fails only its datapoint; the run continues and
    the outcome reports which datapoints failed."""
    out_dir = Path(out_dir)
    traces_dir = out_dir / "traces"
    solutions_dir = out_dir / "solutions"
    traces_dir.mkdir(parents=True, exist_ok=True)
    solutions_dir.mkdir(parents=True, exist_ok=True)

    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists():
        # Resuming: keep the run's original identity.
        manifest = RunManifest.load(out_dir)
    else:
        manifest = RunManifest(
            run_id=compute_run_id(items, config, mock_script),
            mode=config.mode,
            config=config.to_dict(),
            dataset_path=dataset_path,
            kb_path=kb_path,
            mock_script=mock_script,
            backend=backend_info or {},
            created_at=time.time(),
        )
    outcome = RunOutcome(run_id=manifest.run_id, out_dir=str(out_dir))
    lock = threading.Lock()

    pending = []
    for item_id, requirement in items:
        status = manifest.statuses.get(item_id, {}).get("status")
        if status == "done" and (traces_dir / f"{item_id}.json").exists():
            outcome.skipped.append(item_id)
        else:
            pending.append((item_id, requirement))

    def execute(item: tuple[str, str]) -> None:
        item_id, requirement = item
        try:
            trace, solution = _run_one(requirement, item_id, gateway, index, config)
            trace.save(traces_dir / f"{item_id}.json")
            (solutions_dir / f"{item_id}.txt").write_text(solution, encoding="utf-8")
            with lock:
                outcome.completed.append(item_id)
                manifest.statuses[item_id] = {"status": "done", "error": None}
                manifest.updated_at = time.time()
                manifest.save(out_dir)
        except GrowthAborted as exc:
            exc.trace.save(traces_dir / f"{item_id}.json")
            _record_failure(item_id, str(exc))
        except (GatewayError, RuntimeError, ValueError) as exc:
            _record_failure(item_id, str(exc))

    def _record_failure(item_id: str, error: str) -> None:
        with lock:
            outcome.failed[item_id] = error
            manifest.statuses[item_id] = {"status": "failed", "error": error}
            manifest.updated_at = time.time()
            manifest.save(out_dir)

    if jobs > 1 and len(pending) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(execute, pending))
    else:
        for item in pending:
            execute(item)

    outcome.completed.sort()
    manifest.save(out_dir)
    return outcome


def _run_one(requirement, item_id, gateway, index, config):
    if config.mode == "naive_rag":
        baseline = run_naive_rag(
            requirement,
            gateway,
            index,
            retrieval_count=config.retrieval_count,
            max_tokens=config.max_tokens,
            datapoint_id=item_id,
        )
        return baseline.trace, baseline.solution
    # A fresh engine per datapoint keeps node-id counters isolated under
    # datapoint-level parallelism.
    engine = TreeEngine(gateway, index, config)
    result = engine.grow(requirement, datapoint_id=item_id)
    return result.trace, result.final_node.content
