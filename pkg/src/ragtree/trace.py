"""Growth traces: the full audit record of one engine run.

A trace file captures every node (including pruned subtrees), every gateway
call, every prune decision, and the final selection, so analyses can be run
from files alone without re-running the engine. Serialization is canonical
JSON with sorted keys and no timestamps: identical runs produce identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

TRACE_SCHEMA = "growth_trace@1"


class TraceError(ValueError):
    pass


@dataclass
class GrowthTrace:
    mode: str
    requirement: str
    config: dict
    datapoint_id: str | None = None
    nodes: list[dict] = field(default_factory=list)
    layers: dict[str, list[str]] = field(default_factory=dict)
    expansions: list[dict] = field(default_factory=list)
    prune_decisions: list[dict] = field(default_factory=list)
    gateway_calls: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    final_node_id: str | None = None
    final_solution: str | None = None
    status: str = "incomplete"
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "mode": self.mode,
            "requirement": self.requirement,
            "config": self.config,
            "datapoint_id": self.datapoint_id,
            "nodes": self.nodes,
            "layers": self.layers,
            "expansions": self.expansions,
            "prune_decisions": self.prune_decisions,
            "gateway_calls": self.gateway_calls,
            "notes": self.notes,
            "final_node_id": self.final_node_id,
            "final_solution": self.final_solution,
            "status": self.status,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "GrowthTrace":
        if data.get("schema") != TRACE_SCHEMA:
            raise TraceError(f"unsupported trace schema: {data.get('schema')!r}")
        kwargs = {k: v for k, v in data.items() if k != "schema"}
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "GrowthTrace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    # Views used by analyses.

    def node(self, node_id: str) -> dict:
        for record in self.nodes:
            if record["id"] == node_id:
                return record
        raise TraceError(f"trace has no node '{node_id}'")

    def nodes_at_layer(self, layer: int) -> list[dict]:
        ids = self.layers.get(str(layer), [])
        by_id = {record["id"]: record for record in self.nodes}
        return [by_id[i] for i in ids]

    def candidate_counts(self) -> dict[int, int]:
        """Scored nodes per layer. Only beam candidates ever receive scores."""
        counts: dict[int, int] = {}
        for record in self.nodes:
            if record.get("score") is not None:
                counts[record["layer"]] = counts.get(record["layer"], 0) + 1
        return dict(sorted(counts.items()))

    def retained_solutions_by_layer(self) -> dict[int, list[dict]]:
        """Retained solution nodes per layer, for layer-depth analyses."""
        out: dict[int, list[dict]] = {}
        for record in self.nodes:
            if record["kind"] == "solution" and record["retained"]:
                out.setdefault(record["layer"], []).append(record)
        return dict(sorted(out.items()))

    def generate_call_count(self) -> int:
        return sum(1 for call in self.gateway_calls if call["kind"] == "generate")

    def score_call_count(self) -> int:
        return sum(1 for call in self.gateway_calls if call["kind"] == "score")


def load_traces(directory: str | Path) -> list[GrowthTrace]:
    """Load every trace file under a run directory, sorted by filename."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.json"))
    return [GrowthTrace.load(path) for path in paths]
