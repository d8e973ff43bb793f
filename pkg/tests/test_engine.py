from __future__ import annotations

import pytest

from ragtree.bench import KnowledgeBase, KnowledgeItem
from ragtree.engine import (
    ROOT_ID,
    COMMENT_HELPFUL_SUFFIX,
    SOLUTION_RELIABLE_SUFFIX,
    EngineConfig,
    EngineError,
    GrowthAborted,
    NodeScore,
    SolutionTree,
    TreeEngine,
    TreeNode,
)
from ragtree.gateway import LLMGateway
from ragtree.mock import MockEmbedder, MockLLMBackend, MockScript
from ragtree.retrieval import VectorIndex, cosine


def make_index(n_items: int = 20, dim: int = 8, seed: int = 0):
    script = MockScript(seed=seed, embedding_dim=dim)
    items = [
        KnowledgeItem(id=f"k{i:04d}", kind="technical", text=f"fact {i}", source_datapoint_ids=["d"])
        for i in range(n_items)
    ]
    return VectorIndex.build(KnowledgeBase(domain="d", items=items), MockEmbedder(script))


def make_engine(
    config: EngineConfig | None = None,
    script: dict | None = None,
    index: VectorIndex | None = None,
    max_retries: int = 1,
):
    backend = MockLLMBackend(MockScript.from_dict(script or {}))
    gateway = LLMGateway(backend, max_retries=max_retries)
    engine = TreeEngine(gateway, index if index is not None else make_index(), config or EngineConfig())
    return engine, backend


def solution_node(node_id="s1", content="SOL", layer=1, parent=ROOT_ID) -> TreeNode:
    return TreeNode(id=node_id, kind="solution", layer=layer, parent_id=parent,
                    content=content, proposal="p")


def comment_node(node_id, content, parent, layer=2) -> TreeNode:
    return TreeNode(id=node_id, kind="comment", layer=layer, parent_id=parent,
                    content=content, proposal="p")


# -- expansion ---------------------------------------------------------------


def test_design_expand_single_child_uses_scripted_solution():
    engine, _ = make_engine(
        EngineConfig(children_per_node=1),
        script={"generate": [{"contains": "[role:design-solution]", "completions": ["THE SOLUTION"]}]},
    )
    nodes = engine.design_expand("the requirement")
    assert len(nodes) == 1
    assert nodes[0].content == "THE SOLUTION"
    assert nodes[0].kind == "solution"
    assert nodes[0].layer == 1
    assert nodes[0].parent_id == ROOT_ID


def test_design_expand_with_empty_index_has_no_retrieved_ids():
    empty = VectorIndex.build(KnowledgeBase(domain="d", items=[]), MockEmbedder())
    engine, _ = make_engine(index=empty)
    for node in engine.design_expand("req"):
        assert node.retrieved_ids == []


def test_design_expand_retrieves_per_proposal_matching_oracle():
    index = make_index(n_items=30, dim=8)
    engine, _ = make_engine(
        EngineConfig(retrieval_count=5),
        script={"generate": [{"contains": "[role:design-proposal]", "completions": ["P0", "P1"]}]},
        index=index,
    )
    nodes = engine.design_expand("req")
    assert [n.proposal for n in nodes] == ["P0", "P1"]
    for node in nodes:
        qvec = index.embedder.embed_texts([node.proposal])[0]
        expected = sorted(
            ((item.id, cosine(qvec, vec)) for item, vec in zip(index.items, index.matrix)),
            key=lambda pair: (-pair[1], pair[0]),
        )[:5]
        assert node.retrieved_ids == [item_id for item_id, _ in expected]
    assert nodes[0].retrieved_ids != nodes[1].retrieved_ids


def test_review_expand_produces_comment_children():
    engine, _ = make_engine()
    parent = solution_node(layer=3)
    nodes = engine.review_expand("req", parent)
    assert len(nodes) == 2
    assert all(n.kind == "comment" for n in nodes)
    assert all(n.layer == 4 for n in nodes)
    assert all(n.parent_id == "s1" for n in nodes)


def test_review_expand_rejects_comment_parent():
    engine, _ = make_engine()
    with pytest.raises(EngineError):
        engine.review_expand("req", comment_node("c1", "C", parent="s1"))


def test_partial_child_failure_skips_only_that_child():
    engine, _ = make_engine(
        script={"generate": [{"contains": "[role:review-comment]", "fail_times": 1}]},
        max_retries=0,
    )
    # first child's content call fails (retries=0), second succeeds
    nodes = engine.review_expand("req", solution_node())
    assert len(nodes) == 1


# -- scoring -----------------------------------------------------------------


def test_evaluate_solution_mean_of_child_scores():
    engine, _ = make_engine(
        script={
            "score": [
                {"context_contains": "C-ONE", "token_logprobs": [-1.0]},
                {"context_contains": "C-TWO", "token_logprobs": [-2.0]},
            ]
        }
    )
    sol = solution_node()
    children = [comment_node("c1", "C-ONE", "s1"), comment_node("c2", "C-TWO", "s1")]
    score = engine.evaluate_solution(sol, children)
    assert score.child_scores == [-1.0, -2.0]
    assert score.mean == -1.5
    assert score.suffix_used == "u_s"
    assert sol.score == -1.5


def test_evaluate_solution_single_child_equals_child():
    engine, _ = make_engine(script={"score": [{"context_contains": "ONLY", "token_logprobs": [-0.3]}]})
    score = engine.evaluate_solution(solution_node(), [comment_node("c1", "ONLY", "s1")])
    assert score.mean == -0.3


def test_evaluate_solution_uses_reliability_suffix():
    engine, _ = make_engine(
        script={"score": [{"suffix_contains": "above solution is reliable", "token_logprobs": [-0.5]}]}
    )
    score = engine.evaluate_solution(solution_node(), [comment_node("c1", "C", "s1")])
    assert score.mean == -0.5
    assert SOLUTION_RELIABLE_SUFFIX == "According to the comment, above solution is reliable"


def test_evaluate_scripted_ordering_between_solutions():
    engine, _ = make_engine(
        script={
            "score": [
                {"context_contains": "SOL-A", "token_logprobs": [-0.2]},
                {"context_contains": "SOL-B", "token_logprobs": [-1.2]},
            ]
        }
    )
    a = engine.evaluate_solution(solution_node("sa", "SOL-A"), [comment_node("c1", "C", "sa")])
    b = engine.evaluate_solution(solution_node("sb", "SOL-B"), [comment_node("c2", "C", "sb")])
    assert a.mean > b.mean


def test_evaluate_comment_mean_and_suffix():
    engine, _ = make_engine(
        script={
            "score": [
                {"context_contains": "NEW-1", "token_logprobs": [-0.4]},
                {"context_contains": "NEW-2", "token_logprobs": [-0.6]},
            ]
        }
    )
    prior = solution_node("s0", "OLD")
    comment = comment_node("c1", "THE COMMENT", "s0")
    children = [
        solution_node("s1", "NEW-1", layer=3, parent="c1"),
        solution_node("s2", "NEW-2", layer=3, parent="c1"),
    ]
    score = engine.evaluate_comment(prior, comment, children)
    assert score.mean == pytest.approx(-0.5, abs=1e-12)
    assert score.suffix_used == "u_c"
    assert COMMENT_HELPFUL_SUFFIX == (
        "Comparing the new solution and old solution, the comment is helpful"
    )


def test_evaluate_requires_children():
    engine, _ = make_engine()
    with pytest.raises(EngineError):
        engine.evaluate_solution(solution_node(), [])


def test_partial_scoring_failure_averages_over_successes():
    engine, _ = make_engine(
        script={
            "score": [
                {"context_contains": "C-BAD", "fail_times": 9},
                {"context_contains": "C-OK", "token_logprobs": [-1.0]},
            ]
        },
        max_retries=0,
    )
    score = engine.evaluate_solution(
        solution_node(),
        [comment_node("c1", "C-BAD", "s1"), comment_node("c2", "C-OK", "s1")],
    )
    assert score.child_scores == [-1.0]
    assert score.failures == 1
    assert score.mean == -1.0


def test_all_scoring_failures_error():
    engine, _ = make_engine(script={"score": [{"fail_times": 99}]}, max_retries=0)
    from ragtree.gateway import GatewayError

    with pytest.raises(GatewayError):
        engine.evaluate_solution(solution_node(), [comment_node("c1", "C", "s1")])


# -- pruning -----------------------------------------------------------------


def ns(node_id: str, mean: float) -> NodeScore:
    return NodeScore(node_id=node_id, child_scores=[mean], mean=mean, suffix_used="u_s")


def test_prune_keeps_max_of_two():
    a, b = solution_node("a", "A"), solution_node("b", "B")
    engine, _ = make_engine()
    retained = engine.prune_layer([(a, ns("a", -0.1)), (b, ns("b", -0.9))], beam_width=1)
    assert retained == [a]
    assert a.retained and not b.retained


def test_prune_tie_goes_to_earlier_creation():
    a, b = solution_node("a", "A"), solution_node("b", "B")
    engine, _ = make_engine()
    retained = engine.prune_layer([(a, ns("a", -0.5)), (b, ns("b", -0.5))], beam_width=1)
    assert retained == [a]


def test_prune_wide_beam_keeps_everything():
    nodes = [solution_node(f"n{i}", f"S{i}") for i in range(3)]
    engine, _ = make_engine()
    retained = engine.prune_layer([(n, ns(n.id, -1.0 - i)) for i, n in enumerate(nodes)], beam_width=5)
    assert sorted(n.id for n in retained) == sorted(n.id for n in nodes)
    assert all(n.retained for n in nodes)


def test_prune_flags_subtrees_of_losers():
    tree = SolutionTree(requirement="r")
    a, b = solution_node("a", "A"), solution_node("b", "B")
    tree.add(a)
    tree.add(b)
    child = comment_node("c1", "C", parent="b")
    tree.add(child)
    engine, _ = make_engine()
    engine.prune_layer([(a, ns("a", -0.1)), (b, ns("b", -0.9))], beam_width=1, tree=tree)
    assert not child.retained


def test_prune_rejects_mixed_layers():
    engine, _ = make_engine()
    a = solution_node("a", "A", layer=1)
    b = solution_node("b", "B", layer=3)
    with pytest.raises(EngineError):
        engine.prune_layer([(a, ns("a", -1)), (b, ns("b", -2))], beam_width=1)


# -- growth ------------------------------------------------------------------


def expected_call_totals(L: int, H: int, W: int) -> tuple[int, int]:
    """Hand-derived call counts from the growth rules: one root expansion,
    every candidate of layers 1..L expanded once (layer L's round scores it),
    each expansion = 1 proposal call + H content calls, each candidate scored
    with H suffix calls."""
    expansions = 1
    candidates = H
    score_calls = 0
    for layer in range(1, L + 1):
        expansions += candidates
        score_calls += candidates * H
        if layer < L:
            candidates = min(W, candidates) * H
    return expansions * (1 + H), score_calls


def test_grow_smallest_tree():
    engine, backend = make_engine(EngineConfig(max_depth=1, children_per_node=1, beam_width=1))
    result = engine.grow("req")
    assert result.final_node.layer == 1
    assert result.trace.candidate_counts() == {1: 1}
    design_ops = [e for e in result.trace.expansions if e["op"] == "design"]
    assert len(design_ops) == 1
    assert backend.generate_calls == expected_call_totals(1, 1, 1)[0] == 4
    assert backend.score_calls == expected_call_totals(1, 1, 1)[1] == 1


def test_grow_default_config_structure_and_call_totals():
    engine, backend = make_engine(EngineConfig())  # (5, 2, 1, 10)
    result = engine.grow("requirement text")
    trace = result.trace
    assert trace.candidate_counts() == {1: 2, 2: 2, 3: 2, 4: 2, 5: 2}
    # every layer transition generates 4 children; final round adds 4 comments
    for layer in range(2, 7):
        assert len(trace.layers[str(layer)]) == 4
    expected_gen, expected_score = expected_call_totals(5, 2, 1)
    assert backend.generate_calls == expected_gen == 33
    assert backend.score_calls == expected_score == 20
    assert trace.generate_call_count() == expected_gen
    assert trace.score_call_count() == expected_score
    assert result.final_node.layer == 5
    assert trace.status == "complete"


def test_grow_is_deterministic():
    first, _ = make_engine(EngineConfig(), script={"seed": 12})
    second, _ = make_engine(EngineConfig(), script={"seed": 12})
    assert first.grow("same requirement").trace.to_json() == second.grow("same requirement").trace.to_json()


def test_grow_parallel_workers_match_sequential():
    sequential, _ = make_engine(EngineConfig(), script={"seed": 2})
    parallel, _ = make_engine(EngineConfig(max_workers=4), script={"seed": 2})
    assert sequential.grow("req").trace.to_json() == parallel.grow("req").trace.to_json()


class MonotoneScoreBackend(MockLLMBackend):
    """Scores strictly increase with call order; layers are scored in order,
    so deeper layers strictly outscore shallower ones."""

    def score_suffix(self, context: str, suffix: str) -> list[float]:
        with self._lock:
            self.score_calls += 1
            return [-1.0 / self.score_calls]


def test_monotone_scores_increase_along_layers():
    backend = MonotoneScoreBackend(MockScript())
    engine = TreeEngine(LLMGateway(backend, max_retries=1), make_index(), EngineConfig())
    result = engine.grow("req")
    best_by_layer = {}
    for record in result.trace.nodes:
        if record["score"] is not None:
            layer = record["layer"]
            best_by_layer[layer] = max(best_by_layer.get(layer, -100.0), record["score"])
    layers = sorted(best_by_layer)
    assert layers == [1, 2, 3, 4, 5]
    for earlier, later in zip(layers, layers[1:]):
        assert best_by_layer[later] > best_by_layer[earlier]
    assert result.final_node.layer == 5


def test_tie_scores_retain_earliest_created():
    engine, _ = make_engine(script={"score": [{"token_logprobs": [-1.0]}]})
    result = engine.grow("req")
    for decision in result.trace.prune_decisions:
        assert decision["retained"] == [min(decision["retained"] + decision["pruned"])]


@pytest.mark.parametrize("max_depth", [1, 3, 5])
@pytest.mark.parametrize("children", [1, 2, 3])
@pytest.mark.parametrize("beam", [1, 2])
def test_growth_invariants(max_depth, children, beam):
    config = EngineConfig(max_depth=max_depth, children_per_node=children, beam_width=beam)
    engine, _ = make_engine(config, script={"seed": max_depth * 10 + children + beam})
    trace = engine.grow("req").trace
    nodes = {record["id"]: record for record in trace.nodes}

    for record in nodes.values():
        # alternation: solutions odd, comments even, opposite kinds on edges
        expected_kind = "solution" if record["layer"] % 2 == 1 else "comment"
        assert record["kind"] == expected_kind
        if record["parent_id"] != ROOT_ID:
            parent = nodes[record["parent_id"]]
            assert parent["kind"] != record["kind"]
            assert record["layer"] == parent["layer"] + 1

    counts = trace.candidate_counts()
    for layer in range(1, max_depth + 1):
        scored = [r for r in nodes.values() if r["layer"] == layer and r["score"] is not None]
        retained = [r for r in scored if r["retained"]]
        assert counts[layer] == len(scored)
        assert len(retained) == min(beam, len(scored))
        # every candidate was expanded to exactly H children before pruning
        for record in scored:
            kids = [r for r in nodes.values() if r["parent_id"] == record["id"]]
            assert len(kids) == children
        # prune correctness: retained means >= pruned means
        pruned = [r for r in scored if not r["retained"]]
        if pruned:
            assert min(r["score"] for r in retained) >= max(r["score"] for r in pruned)


def test_grow_rejects_empty_requirement():
    engine, _ = make_engine()
    with pytest.raises(EngineError):
        engine.grow("   ")


def test_total_failure_at_root_aborts_with_partial_trace():
    engine, _ = make_engine(
        script={"generate": [{"contains": "[role:design-proposal]", "fail_times": 99}]},
        max_retries=0,
    )
    with pytest.raises(GrowthAborted) as excinfo:
        engine.grow("req")
    assert excinfo.value.trace.status == "aborted"
    assert "layer 1" in excinfo.value.trace.error
    assert excinfo.value.trace.nodes == []


def test_total_failure_mid_tree_keeps_layer_one_nodes():
    engine, _ = make_engine(
        script={"generate": [{"contains": "[role:review-proposal]", "fail_times": 99}]},
        max_retries=0,
    )
    with pytest.raises(GrowthAborted) as excinfo:
        engine.grow("req")
    trace = excinfo.value.trace
    assert trace.status == "aborted"
    assert len(trace.layers["1"]) == 2


def test_expansion_failure_recorded_in_trace():
    engine, _ = make_engine(
        script={"generate": [{"contains": "[role:review-comment]", "fail_times": 1}]},
        max_retries=0,
    )
    trace = engine.grow("req").trace
    failures = [f for e in trace.expansions for f in e["failures"]]
    assert len(failures) == 1
    assert failures[0]["stage"] == "content"
    damaged = [e for e in trace.expansions if e["failures"]]
    assert len(damaged[0]["children"]) == 1  # the surviving sibling


def test_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(max_depth=4)  # even
    with pytest.raises(ValueError):
        EngineConfig(max_depth=-1)
    with pytest.raises(ValueError):
        EngineConfig(children_per_node=0)
    with pytest.raises(ValueError):
        EngineConfig(beam_width=0)
    with pytest.raises(ValueError):
        EngineConfig(mode="bogus")
    with pytest.raises(ValueError):
        EngineConfig(temperature=0.0)  # H=2 needs sampling temperature
    EngineConfig(temperature=0.0, children_per_node=1)  # fine for chains


def test_engine_rejects_naive_rag_mode():
    with pytest.raises(EngineError):
        make_engine(EngineConfig(mode="naive_rag", children_per_node=1, temperature=0.0))
