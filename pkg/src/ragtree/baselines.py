"""Reference pipelines: single-round RAG and the two structural ablations.

Ablations are engine configurations rather than separate implementations, so
comparisons isolate the mechanism under test. Every pipeline emits the same
trace format as the engine, tagged with its mode.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import ROOT_ID, EngineConfig, TreeEngine
from .gateway import CallRecorder, GenerationRequest, LLMGateway
from .prompts import naive_solution
from .retrieval import VectorIndex
from .trace import GrowthTrace

ABLATION_MODES = ("no_tree", "no_bipoint")


@dataclass
class BaselineRun:
    mode: str
    requirement: str
    solution: str
    retrieved_ids: list[str]
    trace: GrowthTrace


def run_naive_rag(
    requirement: str,
    gateway: LLMGateway,
    index: VectorIndex | None,
    retrieval_count: int = 10,
    max_tokens: int = 1024,
    datapoint_id: str | None = None,
) -> BaselineRun:
    """One retrieval over the raw requirement, one generation, no iteration."""
    if not requirement.strip():
        raise ValueError("requirement must be non-empty")
    recorder = CallRecorder()
    retrieved_ids: list[str] = []
    knowledge: list[str] = []
    if index is not None and len(index):
        results = index.retrieve(requirement, retrieval_count)
        retrieved_ids = [r.item.id for r in results]
        knowledge = [r.item.text for r in results]
    solution = gateway.generate(
        GenerationRequest(
            prompt=naive_solution(requirement, knowledge),
            temperature=0.0,
            max_tokens=max_tokens,
            sample_count=1,
        ),
        purpose="naive_solution",
        recorder=recorder,
    )[0]
    trace = GrowthTrace(
        mode="naive_rag",
        requirement=requirement,
        config={"retrieval_count": retrieval_count, "max_tokens": max_tokens},
        datapoint_id=datapoint_id,
        nodes=[
            {
                "id": "n0001",
                "kind": "solution",
                "layer": 1,
                "parent_id": ROOT_ID,
                "content": solution,
                "proposal": "",
                "retrieved_ids": retrieved_ids,
                "score": None,
                "child_scores": [],
                "suffix_used": None,
                "retained": True,
            }
        ],
        layers={"1": ["n0001"]},
        gateway_calls=[r.to_dict() for r in recorder.records],
        final_node_id="n0001",
        final_solution=solution,
        status="complete",
    )
    return BaselineRun(
        mode="naive_rag",
        requirement=requirement,
        solution=solution,
        retrieved_ids=retrieved_ids,
        trace=trace,
    )


def run_ablation(
    requirement: str,
    gateway: LLMGateway,
    index: VectorIndex | None,
    config: EngineConfig,
    datapoint_id: str | None = None,
) -> BaselineRun:
    """Grow the tree under a structural ablation and package the result."""
    if config.mode not in ABLATION_MODES:
        raise ValueError(f"ablation mode must be one of {ABLATION_MODES}, got '{config.mode}'")
    engine = TreeEngine(gateway, index, config)
    result = engine.grow(requirement, datapoint_id=datapoint_id)
    return BaselineRun(
        mode=config.mode,
        requirement=requirement,
        solution=result.final_node.content,
        retrieved_ids=list(result.final_node.retrieved_ids),
        trace=result.trace,
    )
