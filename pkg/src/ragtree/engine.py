"""The design/review tree engine.

Growth alternates two expansion moves over a tree rooted at the requirement:
designing solutions (odd layers) and reviewing them with comments (even
layers). Every expansion samples H directional proposals in one call,
retrieves knowledge per proposal, and generates one child per proposal.
Candidates at each layer are scored from their own children via suffix
logprobs, then beam-pruned to the W best; pruned nodes and their generated
children stay in the tree, flagged, for later analysis. When the final
solution layer is reached, one extra review round (not counted toward depth)
scores its candidates and the best one is returned.

Ablation modes reshape growth without forking the algorithm: "no_tree"
forces a single child per node (a chain), and "no_bipoint" drops review
entirely, refining solutions directly from solutions.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

from .gateway import CallRecorder, GatewayError, GenerationRequest, LLMGateway
from .retrieval import VectorIndex
from .trace import GrowthTrace
from . import prompts

ROOT_ID = "root"

SOLUTION_RELIABLE_SUFFIX = "According to the comment, above solution is reliable"
COMMENT_HELPFUL_SUFFIX = "Comparing the new solution and old solution, the comment is helpful"

GROWTH_MODES = ("full", "no_tree", "no_bipoint")
ALL_MODES = GROWTH_MODES + ("naive_rag",)


class EngineError(RuntimeError):
    pass


class GrowthAborted(EngineError):
    """Every expansion at some layer failed; carries the partial artifacts."""

    def __init__(self, message: str, tree: "SolutionTree", trace: GrowthTrace):
        super().__init__(message)
        self.tree = tree
        self.trace = trace


@dataclass
class EngineConfig:
    max_depth: int = 5        # L, must be odd: the last layer holds solutions
    children_per_node: int = 2  # H
    beam_width: int = 1       # W
    retrieval_count: int = 10  # R
    temperature: float = 0.7
    max_tokens: int = 1024
    seed: int | None = None
    mode: str = "full"
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.max_depth % 2 == 0:
            raise ValueError("max_depth must be an odd integer >= 1")
        if self.children_per_node < 1:
            raise ValueError("children_per_node must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.retrieval_count < 1:
            raise ValueError("retrieval_count must be >= 1")
        if self.mode not in ALL_MODES:
            raise ValueError(f"mode must be one of {ALL_MODES}")
        if self.effective_children() > 1 and self.temperature <= 0:
            raise ValueError("temperature must be > 0 to sample multiple children")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")

    def effective_children(self) -> int:
        """The chain ablation caps branching at one child regardless of H."""
        return 1 if self.mode == "no_tree" else self.children_per_node

    def to_dict(self) -> dict:
        # max_workers is an execution knob with no effect on outputs, so it
        # stays out of the snapshot: equal snapshots mean equal results.
        return {
            "max_depth": self.max_depth,
            "children_per_node": self.effective_children(),
            "beam_width": self.beam_width,
            "retrieval_count": self.retrieval_count,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        names = {
            "max_depth",
            "children_per_node",
            "beam_width",
            "retrieval_count",
            "temperature",
            "max_tokens",
            "seed",
            "mode",
            "max_workers",
        }
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown engine config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TreeNode:
    id: str
    kind: str  # "solution" or "comment"
    layer: int
    parent_id: str
    content: str
    proposal: str
    retrieved_ids: list[str] = field(default_factory=list)
    score: float | None = None
    child_scores: list[float] = field(default_factory=list)
    suffix_used: str | None = None
    retained: bool = False

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "layer": self.layer,
            "parent_id": self.parent_id,
            "content": self.content,
            "proposal": self.proposal,
            "retrieved_ids": list(self.retrieved_ids),
            "score": self.score,
            "child_scores": list(self.child_scores),
            "suffix_used": self.suffix_used,
            "retained": self.retained,
        }


@dataclass
class NodeScore:
    node_id: str
    child_scores: list[float]
    mean: float
    suffix_used: str
    failures: int = 0


@dataclass
class SolutionTree:
    """Requirement-rooted tree of alternating solution and comment nodes.

    The synthetic root is not stored as a node; layer-1 nodes carry
    parent_id == ROOT_ID. Pruned nodes stay in the tree. The uni-point
    ablation sets alternating=False, which lifts the kind-alternation check
    (every node is then a solution).
    """

    requirement: str
    nodes: dict[str, TreeNode] = field(default_factory=dict)
    layers: dict[int, list[str]] = field(default_factory=dict)
    alternating: bool = True

    def add(self, node: TreeNode) -> None:
        if node.id in self.nodes:
            raise EngineError(f"duplicate node id {node.id}")
        if node.parent_id != ROOT_ID:
            parent = self.nodes.get(node.parent_id)
            if parent is None:
                raise EngineError(f"unknown parent {node.parent_id}")
            if self.alternating and parent.kind == node.kind:
                raise EngineError("parent and child must have opposite kinds")
            if node.layer != parent.layer + 1:
                raise EngineError("child layer must be parent layer + 1")
        elif node.layer != 1 or node.kind != "solution":
            raise EngineError("root children must be solutions at layer 1")
        self.nodes[node.id] = node
        self.layers.setdefault(node.layer, []).append(node.id)

    def children_of(self, node_id: str) -> list[TreeNode]:
        return [n for n in self.nodes.values() if n.parent_id == node_id]

    def parent_of(self, node: TreeNode) -> TreeNode | None:
        if node.parent_id == ROOT_ID:
            return None
        return self.nodes[node.parent_id]


@dataclass
class GrowResult:
    final_node: TreeNode
    tree: SolutionTree
    trace: GrowthTrace


@dataclass
class _Expansion:
    parent_id: str
    op: str
    drafts: list[TreeNode]
    failures: list[dict]
    records: CallRecorder


class TreeEngine:
    def __init__(self, gateway: LLMGateway, index: VectorIndex | None, config: EngineConfig):
        if config.mode not in GROWTH_MODES:
            raise EngineError(f"engine growth requires mode in {GROWTH_MODES}, got '{config.mode}'")
        self.gateway = gateway
        self.index = index
        self.config = config
        self._counter = 0

    # -- expansion ---------------------------------------------------------

    def _next_id(self) -> str:
        self._counter += 1
        return f"n{self._counter:04d}"

    def _request(self, prompt, sample_count: int) -> GenerationRequest:
        cfg = self.config
        return GenerationRequest(
            prompt=prompt,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            sample_count=sample_count,
            seed=cfg.seed,
        )

    def _retrieve(self, query: str) -> list[str]:
        if self.index is None or len(self.index) == 0:
            return []
        results = self.index.retrieve(query, self.config.retrieval_count)
        return [r.item.id for r in results]

    def _knowledge_texts(self, item_ids: list[str]) -> list[str]:
        if self.index is None:
            return []
        by_id = {item.id: item.text for item in self.index.items}
        return [by_id[i] for i in item_ids]

    def _generate_children(
        self,
        op: str,
        kind: str,
        parent_id: str,
        layer: int,
        proposal_prompt,
        content_prompt_fn,
        recorder: CallRecorder,
    ) -> tuple[list[TreeNode], list[dict]]:
        """One expansion: sample H proposals, then retrieve and generate per
        proposal. Children are drafts without ids; the grow barrier assigns
        ids in creation order. A failed proposal call fails the whole
        expansion; a failed child generation skips only that child."""
        h = self.config.effective_children()
        try:
            proposals = self.gateway.generate(
                self._request(proposal_prompt, h), purpose=f"{op}_proposal", recorder=recorder
            )
        except GatewayError as exc:
            return [], [{"stage": "proposal", "slot": None, "error": str(exc)}]
        drafts: list[TreeNode] = []
        failures: list[dict] = []
        for slot, proposal in enumerate(proposals):
            try:
                retrieved = self._retrieve(proposal)
                knowledge = self._knowledge_texts(retrieved)
                content = self.gateway.generate(
                    self._request(content_prompt_fn(knowledge), 1),
                    purpose=f"{op}_content",
                    recorder=recorder,
                )[0]
            except GatewayError as exc:
                failures.append({"stage": "content", "slot": slot, "error": str(exc)})
                continue
            drafts.append(
                TreeNode(
                    id="",
                    kind=kind,
                    layer=layer,
                    parent_id=parent_id,
                    content=content,
                    proposal=proposal,
                    retrieved_ids=retrieved,
                )
            )
        return drafts, failures

    def design_expand(
        self,
        requirement: str,
        prior_solution: str = "",
        comment: str = "",
        parent: TreeNode | None = None,
        recorder: CallRecorder | None = None,
    ) -> list[TreeNode]:
        """Expand toward new solutions, optionally refining a prior solution
        under a review comment. With no parent, children sit at layer 1."""
        recorder = recorder if recorder is not None else CallRecorder()
        layer = parent.layer + 1 if parent else 1
        parent_id = parent.id if parent else ROOT_ID
        drafts, failures = self._generate_children(
            op="design",
            kind="solution",
            parent_id=parent_id,
            layer=layer,
            proposal_prompt=prompts.design_proposal(requirement, comment),
            content_prompt_fn=lambda knowledge: prompts.design_solution(
                requirement, prior_solution, comment, knowledge
            ),
            recorder=recorder,
        )
        if failures and not drafts:
            raise GatewayError(f"design expansion failed entirely: {failures[0]['error']}")
        for draft in drafts:
            draft.id = self._next_id()
        return drafts

    def review_expand(
        self,
        requirement: str,
        solution_node: TreeNode,
        recorder: CallRecorder | None = None,
    ) -> list[TreeNode]:
        """Expand a solution into review comments identifying deficiencies."""
        if solution_node.kind != "solution":
            raise EngineError("review_expand requires a solution node")
        recorder = recorder if recorder is not None else CallRecorder()
        drafts, failures = self._generate_children(
            op="review",
            kind="comment",
            parent_id=solution_node.id,
            layer=solution_node.layer + 1,
            proposal_prompt=prompts.review_proposal(requirement, solution_node.content),
            content_prompt_fn=lambda knowledge: prompts.review_comment(
                requirement, solution_node.content, knowledge
            ),
            recorder=recorder,
        )
        if failures and not drafts:
            raise GatewayError(f"review expansion failed entirely: {failures[0]['error']}")
        for draft in drafts:
            draft.id = self._next_id()
        return drafts

    # -- scoring -----------------------------------------------------------

    def evaluate_solution(
        self,
        solution: TreeNode,
        comment_children: list[TreeNode],
        recorder: CallRecorder | None = None,
    ) -> NodeScore:
        """Reliability of a solution: mean suffix logprob of the reliability
        statement over each child, averaged across children.

        Children are normally review comments; under the uni-point ablation
        they are refined solutions, labeled accordingly in the context."""
        if not comment_children:
            raise EngineError("evaluate_solution requires at least one child")
        return self._evaluate(
            solution,
            contexts=[
                (
                    f"Solution:\n{solution.content}\n\n"
                    f"{'Comment' if child.kind == 'comment' else 'Revised solution'}:"
                    f"\n{child.content}\n\n"
                )
                for child in comment_children
            ],
            suffix=SOLUTION_RELIABLE_SUFFIX,
            suffix_used="u_s",
            recorder=recorder,
        )

    def evaluate_comment(
        self,
        prior_solution: TreeNode,
        comment: TreeNode,
        solution_children: list[TreeNode],
        recorder: CallRecorder | None = None,
    ) -> NodeScore:
        """Helpfulness of a comment: mean suffix logprob of the helpfulness
        statement over each (old solution, comment, new solution) triple."""
        if not solution_children:
            raise EngineError("evaluate_comment requires at least one child")
        return self._evaluate(
            comment,
            contexts=[
                (
                    f"Old solution:\n{prior_solution.content}\n\n"
                    f"Comment:\n{comment.content}\n\n"
                    f"New solution:\n{child.content}\n\n"
                )
                for child in solution_children
            ],
            suffix=COMMENT_HELPFUL_SUFFIX,
            suffix_used="u_c",
            recorder=recorder,
        )

    def _evaluate(self, node, contexts, suffix, suffix_used, recorder) -> NodeScore:
        child_scores: list[float] = []
        failures = 0
        last_error: Exception | None = None
        for context in contexts:
            try:
                result = self.gateway.score_suffix(
                    context, suffix, purpose=f"evaluate:{suffix_used}", recorder=recorder
                )
                child_scores.append(result.mean_logprob)
            except GatewayError as exc:
                failures += 1
                last_error = exc
        if not child_scores:
            raise GatewayError(f"all scoring calls failed for {node.id}: {last_error}")
        score = NodeScore(
            node_id=node.id,
            child_scores=child_scores,
            mean=sum(child_scores) / len(child_scores),
            suffix_used=suffix_used,
            failures=failures,
        )
        node.score = score.mean
        node.child_scores = list(child_scores)
        node.suffix_used = suffix_used
        return score

    # -- pruning -----------------------------------------------------------

    def prune_layer(
        self,
        candidates: list[tuple[TreeNode, NodeScore]],
        beam_width: int,
        tree: SolutionTree | None = None,
    ) -> list[TreeNode]:
        """Keep the top beam_width candidates by mean score.

        Python's stable sort resolves ties toward earlier creation order, as
        candidates arrive in that order. Losers and their already-generated
        subtrees stay in the tree with retained=False.
        """
        if beam_width < 1:
            raise EngineError("beam_width must be >= 1")
        layers = {node.layer for node, _ in candidates}
        if len(layers) > 1:
            raise EngineError("prune candidates must share one layer")
        ranked = sorted(candidates, key=lambda pair: -pair[1].mean)
        winners = [node for node, _ in ranked[:beam_width]]
        for node, _ in ranked[beam_width:]:
            node.retained = False
            if tree is not None:
                self._flag_subtree(tree, node.id)
        for node in winners:
            node.retained = True
        return winners

    def _flag_subtree(self, tree: SolutionTree, node_id: str) -> None:
        for child in tree.children_of(node_id):
            child.retained = False
            self._flag_subtree(tree, child.id)

    # -- growth ------------------------------------------------------------

    def grow(self, requirement: str, datapoint_id: str | None = None) -> GrowResult:
        """Grow the full tree for one requirement and return the winning
        solution, the tree, and the complete trace.

        Raises GrowthAborted (carrying the partial trace) if every expansion
        at some layer fails.
        """
        if not requirement.strip():
            raise EngineError("requirement must be non-empty")
        cfg = self.config
        self._counter = 0
        tree = SolutionTree(requirement=requirement, alternating=cfg.mode != "no_bipoint")
        trace = GrowthTrace(
            mode=cfg.mode,
            requirement=requirement,
            config=cfg.to_dict(),
            datapoint_id=datapoint_id,
        )
        if cfg.mode == "no_tree" and cfg.children_per_node != 1:
            trace.notes.append(
                f"no_tree mode: children_per_node overridden {cfg.children_per_node} -> 1"
            )
        trace.notes.append("proposals per expansion come from one multi-sample call")

        candidates = self._run_expansions(tree, trace, [None], layer=1)
        if not candidates:
            return self._abort(tree, trace, "total expansion failure at layer 1")

        for layer in range(1, cfg.max_depth + 1):
            children = self._run_expansions(tree, trace, candidates, layer=layer + 1)
            if not children:
                return self._abort(tree, trace, f"total expansion failure below layer {layer}")
            scored = self._score_candidates(tree, trace, candidates)
            if not scored:
                return self._abort(tree, trace, f"no candidate at layer {layer} could be scored")
            retained = self.prune_layer(scored, cfg.beam_width, tree)
            pruned = [node for node, _ in scored if not node.retained]
            if pruned:
                trace.prune_decisions.append(
                    {
                        "layer": layer,
                        "retained": [n.id for n in retained],
                        "pruned": [n.id for n in pruned],
                        "scores": {node.id: ns.mean for node, ns in scored},
                    }
                )
            if layer == cfg.max_depth:
                final = retained[0]
                self._finish(tree, trace, final)
                return GrowResult(final_node=final, tree=tree, trace=trace)
            candidates = sorted(
                (child for node in retained for child in tree.children_of(node.id)),
                key=lambda n: n.id,
            )
            if not candidates:
                return self._abort(tree, trace, f"no candidates available at layer {layer + 1}")
        raise EngineError("unreachable")  # loop always returns at max_depth

    def _run_expansions(
        self,
        tree: SolutionTree,
        trace: GrowthTrace,
        parents: list[TreeNode | None],
        layer: int,
    ) -> list[TreeNode]:
        """Expand every parent into children at `layer`, merging results at a
        single barrier so ids, tree contents, and trace order are identical
        no matter how many workers ran."""
        if self.config.max_workers > 1 and len(parents) > 1:
            with concurrent.futures.ThreadPoolExecutor(self.config.max_workers) as pool:
                expansions = list(pool.map(lambda p: self._expand_one(tree, p), parents))
        else:
            expansions = [self._expand_one(tree, parent) for parent in parents]

        children: list[TreeNode] = []
        for expansion in expansions:
            for draft in expansion.drafts:
                draft.id = self._next_id()
                tree.add(draft)
                children.append(draft)
            trace.expansions.append(
                {
                    "parent_id": expansion.parent_id,
                    "op": expansion.op,
                    "layer": layer,
                    "children": [d.id for d in expansion.drafts],
                    "failures": expansion.failures,
                }
            )
            trace.gateway_calls.extend(r.to_dict() for r in expansion.records.records)
        return children

    def _expand_one(self, tree: SolutionTree, parent: TreeNode | None) -> _Expansion:
        requirement = tree.requirement
        recorder = CallRecorder()
        if parent is None:
            op, kind = "design", "solution"
            proposal_prompt = prompts.design_proposal(requirement)
            content_fn = lambda knowledge: prompts.design_solution(requirement, "", "", knowledge)
            parent_id, layer = ROOT_ID, 1
        elif self.config.mode == "no_bipoint":
            op, kind = "refine", "solution"
            proposal_prompt = prompts.refine_proposal(requirement, parent.content)
            content_fn = lambda knowledge: prompts.refine_solution(
                requirement, parent.content, knowledge
            )
            parent_id, layer = parent.id, parent.layer + 1
        elif parent.kind == "solution":
            op, kind = "review", "comment"
            proposal_prompt = prompts.review_proposal(requirement, parent.content)
            content_fn = lambda knowledge: prompts.review_comment(
                requirement, parent.content, knowledge
            )
            parent_id, layer = parent.id, parent.layer + 1
        else:
            prior = tree.parent_of(parent)
            prior_text = prior.content if prior else ""
            op, kind = "design", "solution"
            proposal_prompt = prompts.design_proposal(requirement, parent.content)
            content_fn = lambda knowledge: prompts.design_solution(
                requirement, prior_text, parent.content, knowledge
            )
            parent_id, layer = parent.id, parent.layer + 1
        drafts, failures = self._generate_children(
            op=op,
            kind=kind,
            parent_id=parent_id,
            layer=layer,
            proposal_prompt=proposal_prompt,
            content_prompt_fn=content_fn,
            recorder=recorder,
        )
        return _Expansion(
            parent_id=parent_id, op=op, drafts=drafts, failures=failures, records=recorder
        )

    def _score_candidates(
        self, tree: SolutionTree, trace: GrowthTrace, candidates: list[TreeNode]
    ) -> list[tuple[TreeNode, NodeScore]]:
        recorder = CallRecorder()
        scored: list[tuple[TreeNode, NodeScore]] = []
        for node in candidates:
            children = tree.children_of(node.id)
            if not children:
                trace.notes.append(f"node {node.id} had no children to score; excluded")
                continue
            try:
                if node.kind == "comment":
                    prior = tree.parent_of(node)
                    score = self.evaluate_comment(prior, node, children, recorder)
                else:
                    score = self.evaluate_solution(node, children, recorder)
            except GatewayError as exc:
                trace.notes.append(f"scoring failed for node {node.id}: {exc}")
                continue
            if score.failures:
                trace.notes.append(
                    f"node {node.id}: {score.failures} scoring call(s) failed; "
                    f"mean over {len(score.child_scores)} children"
                )
            scored.append((node, score))
        trace.gateway_calls.extend(r.to_dict() for r in recorder.records)
        return scored

    def _finish(self, tree: SolutionTree, trace: GrowthTrace, final: TreeNode) -> None:
        trace.final_node_id = final.id
        trace.final_solution = final.content
        trace.status = "complete"
        self._snapshot_nodes(tree, trace)

    def _abort(self, tree: SolutionTree, trace: GrowthTrace, message: str) -> GrowResult:
        trace.status = "aborted"
        trace.error = message
        self._snapshot_nodes(tree, trace)
        raise GrowthAborted(message, tree=tree, trace=trace)

    def _snapshot_nodes(self, tree: SolutionTree, trace: GrowthTrace) -> None:
        trace.nodes = [
            tree.nodes[node_id].to_record()
            for layer in sorted(tree.layers)
            for node_id in tree.layers[layer]
        ]
        trace.layers = {str(layer): list(ids) for layer, ids in sorted(tree.layers.items())}
