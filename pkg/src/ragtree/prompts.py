"""Prompt builders for every model-facing role in the engine.

Each system string carries a stable role marker so scripted mock rules can
target a role by substring without knowing the full prompt text.
"""

from __future__ import annotations

from .gateway import Prompt


def _knowledge_block(knowledge: list[str]) -> str:
    if not knowledge:
        return "(no reference material retrieved)"
    return "\n".join(f"{i + 1}. {text}" for i, text in enumerate(knowledge))


def design_proposal(requirement: str, comment: str = "") -> Prompt:
    """Sample distinct directions for designing (or redesigning) a solution."""
    if comment:
        user = (
            f"Requirement:\n{requirement}\n\n"
            f"Review comment on the current solution:\n{comment}\n\n"
            "Propose one concrete direction for revising the solution so the "
            "comment's concerns are resolved. Answer with the direction only."
        )
    else:
        user = (
            f"Requirement:\n{requirement}\n\n"
            "Propose one concrete direction for designing a solution that "
            "satisfies every stated constraint. Answer with the direction only."
        )
    return Prompt(system="[role:design-proposal] You are an engineering planner.", user=user)


def design_solution(
    requirement: str, prior_solution: str, comment: str, knowledge: list[str]
) -> Prompt:
    """Write a complete solution, optionally refining a prior one under a comment."""
    parts = [f"Requirement:\n{requirement}"]
    if prior_solution:
        parts.append(f"Current solution:\n{prior_solution}")
    if comment:
        parts.append(f"Review comment to address:\n{comment}")
    parts.append(f"Reference material:\n{_knowledge_block(knowledge)}")
    parts.append(
        "Write a complete, feasible solution that satisfies every constraint in "
        "the requirement. Ground technical choices in the reference material "
        "where it applies."
    )
    return Prompt(
        system="[role:design-solution] You are a senior engineer writing full solutions.",
        user="\n\n".join(parts),
    )


def review_proposal(requirement: str, solution: str) -> Prompt:
    """Sample distinct directions for critiquing a solution."""
    user = (
        f"Requirement:\n{requirement}\n\n"
        f"Candidate solution:\n{solution}\n\n"
        "Propose one specific aspect of this solution to scrutinize against the "
        "requirement's constraints. Answer with the aspect only."
    )
    return Prompt(system="[role:review-proposal] You are an engineering reviewer.", user=user)


def review_comment(requirement: str, solution: str, knowledge: list[str]) -> Prompt:
    """Write a critique identifying where the solution falls short."""
    user = (
        f"Requirement:\n{requirement}\n\n"
        f"Candidate solution:\n{solution}\n\n"
        f"Reference material:\n{_knowledge_block(knowledge)}\n\n"
        "Identify the concrete deficiencies of this solution with respect to the "
        "requirement. Be specific about which constraints are not yet satisfied."
    )
    return Prompt(
        system="[role:review-comment] You are a strict engineering reviewer.", user=user
    )


def refine_proposal(requirement: str, prior_solution: str) -> Prompt:
    """Uni-point refinement: direction for improving a solution without review."""
    user = (
        f"Requirement:\n{requirement}\n\n"
        f"Current solution:\n{prior_solution}\n\n"
        "Propose one concrete direction for improving this solution. "
        "Answer with the direction only."
    )
    return Prompt(system="[role:refine-proposal] You are an engineering planner.", user=user)


def refine_solution(requirement: str, prior_solution: str, knowledge: list[str]) -> Prompt:
    """Uni-point refinement: regenerate an improved solution directly."""
    user = (
        f"Requirement:\n{requirement}\n\n"
        f"Current solution:\n{prior_solution}\n\n"
        f"Reference material:\n{_knowledge_block(knowledge)}\n\n"
        "Write an improved complete solution that satisfies every constraint."
    )
    return Prompt(
        system="[role:refine-solution] You are a senior engineer improving solutions.",
        user=user,
    )


def naive_solution(requirement: str, knowledge: list[str]) -> Prompt:
    """Single-shot generation over raw retrieval results."""
    user = (
        f"Requirement:\n{requirement}\n\n"
        f"Reference material:\n{_knowledge_block(knowledge)}\n\n"
        "Write a complete, feasible solution that satisfies every constraint."
    )
    return Prompt(
        system="[role:naive-solution] You are a senior engineer writing full solutions.",
        user=user,
    )


def judge_prompt(
    dimension: str,
    system_solution: str,
    gold_solution: str,
    knowledge: list[str],
    explanation: str,
) -> Prompt:
    """Score a candidate against expert references on one dimension.

    `dimension` is "analytical" (does the candidate analyze the constraints
    the way the references do?) or "technical" (does it apply the right
    technologies to address them?).
    """
    if dimension == "analytical":
        question = (
            "Judge whether the candidate solution, like the expert solution, uses "
            "the correct analytical knowledge to adequately analyze the complex "
            "constraints in the requirement's scenario."
        )
    elif dimension == "technical":
        question = (
            "Judge whether the candidate solution, like the expert solution, uses "
            "the correct technical knowledge to tackle the complex constraints "
            "in the requirement's scenario."
        )
    else:
        raise ValueError(f"unknown judge dimension: {dimension}")
    user = (
        f"Expert solution:\n{gold_solution}\n\n"
        f"Expert {dimension} knowledge:\n{_knowledge_block(knowledge)}\n\n"
        f"Expert design explanation:\n{explanation or '(none provided)'}\n\n"
        f"Candidate solution:\n{system_solution}\n\n"
        f"{question} Explain briefly, then end with exactly one line of the "
        "form 'Score: <integer 0-100>'."
    )
    return Prompt(
        system=f"[role:judge-{dimension}] You are a meticulous engineering evaluator.",
        user=user,
    )
