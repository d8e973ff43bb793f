"""LLM-judge scoring of generated solutions and trace analytics.

The judge model is configured separately from the engine model and rates a
candidate 0-100 on two dimensions: analytical (does it analyze the
requirement's constraints the way the expert references do?) and technical
(does it apply the right technologies?). The judge's reply contract is a
final line "Score: <integer>"; the parser takes the last match and retries a
configurable number of times before marking the datapoint unscored.

Trace analytics (per-layer score progression, retained-vs-pruned comparison)
work from trace files alone and never re-run the engine.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .bench import Datapoint
from .gateway import GatewayError, GenerationRequest, LLMGateway
from .prompts import judge_prompt
from .trace import GrowthTrace

_SCORE_LINE = re.compile(r"Score:\s*(-?\d+)")


class JudgeParseError(ValueError):
    pass


@dataclass
class JudgeVerdict:
    datapoint_id: str
    analytical_score: int | None
    technical_score: int | None
    analytical_raw: str = ""
    technical_raw: str = ""

    @property
    def scored(self) -> bool:
        return self.analytical_score is not None and self.technical_score is not None

    @property
    def overall(self) -> float | None:
        if not self.scored:
            return None
        return (self.analytical_score + self.technical_score) / 2

    def to_dict(self) -> dict:
        return {
            "datapoint_id": self.datapoint_id,
            "analytical_score": self.analytical_score,
            "technical_score": self.technical_score,
            "analytical_raw": self.analytical_raw,
            "technical_raw": self.technical_raw,
        }


def parse_score(text: str) -> int:
    """Extract the final 'Score: <n>' line; only integers in [0, 100] count."""
    matches = _SCORE_LINE.findall(text)
    if not matches:
        raise JudgeParseError(f"no score line in judge output: {text!r}")
    value = int(matches[-1])
    if not 0 <= value <= 100:
        raise JudgeParseError(f"judge score out of range: {value}")
    return value


class Judge:
    """Wraps a gateway into the two scoring dimensions.

    One call per dimension at temperature 0 by default; parse failures are
    retried up to `parse_retries` times with the same prompt.
    """

    def __init__(
        self,
        gateway: LLMGateway,
        parse_retries: int = 2,
        temperature: float = 0.0,
        max_tokens: int = 512,
    ):
        self.gateway = gateway
        self.parse_retries = parse_retries
        self.temperature = temperature
        self.max_tokens = max_tokens

    def _ask(self, prompt, purpose: str) -> tuple[int, str]:
        last_output = ""
        for _ in range(1 + self.parse_retries):
            output = self.gateway.generate(
                GenerationRequest(
                    prompt=prompt,
                    temperature=self.temperature,
                    max_tokens=self.max_tokens,
                    sample_count=1,
                ),
                purpose=purpose,
            )[0]
            last_output = output
            try:
                return parse_score(output), output
            except JudgeParseError:
                continue
        raise JudgeParseError(f"unparseable after {1 + self.parse_retries} attempts: {last_output!r}")

    def analytical(
        self,
        system_solution: str,
        gold_solution: str,
        analytical_knowledge: list[str],
        explanation: str,
    ) -> int:
        score, _ = self._ask(
            judge_prompt("analytical", system_solution, gold_solution, analytical_knowledge, explanation),
            purpose="judge_analytical",
        )
        return score

    def technical(
        self,
        system_solution: str,
        gold_solution: str,
        technical_knowledge: list[str],
        explanation: str,
    ) -> int:
        score, _ = self._ask(
            judge_prompt("technical", system_solution, gold_solution, technical_knowledge, explanation),
            purpose="judge_technical",
        )
        return score

    def verdict(self, system_solution: str, dp: Datapoint) -> JudgeVerdict:
        """Score both dimensions; an unparseable dimension leaves the verdict
        unscored rather than failing the evaluation run."""
        analytical = technical = None
        a_raw = t_raw = ""
        try:
            analytical, a_raw = self._ask(
                judge_prompt("analytical", system_solution, dp.solution, dp.analytical_knowledge, dp.explanation),
                purpose="judge_analytical",
            )
            technical, t_raw = self._ask(
                judge_prompt("technical", system_solution, dp.solution, dp.technical_knowledge, dp.explanation),
                purpose="judge_technical",
            )
        except (JudgeParseError, GatewayError) as exc:
            return JudgeVerdict(
                datapoint_id=dp.id,
                analytical_score=analytical,
                technical_score=None,
                analytical_raw=a_raw or str(exc),
                technical_raw=t_raw or str(exc),
            )
        return JudgeVerdict(
            datapoint_id=dp.id,
            analytical_score=analytical,
            technical_score=technical,
            analytical_raw=a_raw,
            technical_raw=t_raw,
        )


@dataclass
class DomainScores:
    domain: str
    analytical_mean: float | None
    technical_mean: float | None
    scored: int
    unscored: int

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "analytical_mean": self.analytical_mean,
            "technical_mean": self.technical_mean,
            "scored": self.scored,
            "unscored": self.unscored,
        }


@dataclass
class EvalReport:
    mode: str
    domains: list[DomainScores] = field(default_factory=list)
    verdicts: list[JudgeVerdict] = field(default_factory=list)
    unscored_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "domains": [d.to_dict() for d in self.domains],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "unscored_ids": self.unscored_ids,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    def table(self) -> str:
        lines = [f"{'domain':<20} {'AS':>8} {'TS':>8} {'scored':>7} {'unscored':>9}"]
        for d in self.domains:
            a = f"{d.analytical_mean:.1f}" if d.analytical_mean is not None else "-"
            t = f"{d.technical_mean:.1f}" if d.technical_mean is not None else "-"
            lines.append(f"{d.domain:<20} {a:>8} {t:>8} {d.scored:>7} {d.unscored:>9}")
        return "\n".join(lines)


def evaluate_runs(
    solutions: dict[str, str], dataset: list[Datapoint], judge: Judge, mode: str = "unknown"
) -> EvalReport:
    """Judge every (datapoint id -> system solution) pair and aggregate
    per-domain means. Solutions without a matching datapoint are an error;
    unscored datapoints are excluded from means and listed in the report."""
    by_id = {dp.id: dp for dp in dataset}
    orphans = sorted(set(solutions) - set(by_id))
    if orphans:
        raise ValueError(f"run outputs reference unknown datapoints: {orphans}")

    verdicts = []
    for dp_id in sorted(solutions):
        verdicts.append(judge.verdict(solutions[dp_id], by_id[dp_id]))

    by_domain: dict[str, list[JudgeVerdict]] = {}
    for verdict in verdicts:
        domain = by_id[verdict.datapoint_id].domain
        by_domain.setdefault(domain, []).append(verdict)

    domains = []
    unscored_ids = []
    for domain in sorted(by_domain):
        group = by_domain[domain]
        scored = [v for v in group if v.scored]
        unscored_ids.extend(v.datapoint_id for v in group if not v.scored)
        domains.append(
            DomainScores(
                domain=domain,
                analytical_mean=(
                    sum(v.analytical_score for v in scored) / len(scored) if scored else None
                ),
                technical_mean=(
                    sum(v.technical_score for v in scored) / len(scored) if scored else None
                ),
                scored=len(scored),
                unscored=len(group) - len(scored),
            )
        )
    return EvalReport(mode=mode, domains=domains, verdicts=verdicts, unscored_ids=sorted(unscored_ids))


@dataclass
class LayerScores:
    layer: int
    analytical_mean: float | None
    technical_mean: float | None
    count: int

    @property
    def overall_mean(self) -> float | None:
        if self.analytical_mean is None or self.technical_mean is None:
            return None
        return (self.analytical_mean + self.technical_mean) / 2

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "analytical_mean": self.analytical_mean,
            "technical_mean": self.technical_mean,
            "overall_mean": self.overall_mean,
            "count": self.count,
        }


def layer_analysis(
    traces: list[GrowthTrace],
    dataset: list[Datapoint],
    judge: Judge,
) -> list[LayerScores]:
    """Judge the retained solution at every solution layer of every trace and
    aggregate per layer, showing how quality moves as trees deepen.

    Traces missing a layer (aborted runs, shallower configs) simply
    contribute nothing to it; per-layer counts expose the difference.
    """
    by_id = {dp.id: dp for dp in dataset}
    buckets: dict[int, list[JudgeVerdict]] = {}
    for trace in traces:
        dp = by_id.get(trace.datapoint_id or "")
        if dp is None:
            continue
        for layer, records in trace.retained_solutions_by_layer().items():
            for record in records:
                buckets.setdefault(layer, []).append(judge.verdict(record["content"], dp))
    out = []
    for layer in sorted(buckets):
        scored = [v for v in buckets[layer] if v.scored]
        out.append(
            LayerScores(
                layer=layer,
                analytical_mean=(
                    sum(v.analytical_score for v in scored) / len(scored) if scored else None
                ),
                technical_mean=(
                    sum(v.technical_score for v in scored) / len(scored) if scored else None
                ),
                count=len(buckets[layer]),
            )
        )
    return out


def pruned_vs_retained(
    traces: list[GrowthTrace],
    dataset: list[Datapoint],
    judge: Judge,
) -> dict:
    """Compare judge scores of retained versus pruned solution candidates at
    every pruning site, overall and per layer.

    A solution's score here is the mean of its two judge dimensions. When no
    pruning ever happened the pruned mean is absent and the report says so.
    """
    by_id = {dp.id: dp for dp in dataset}
    retained_scores: list[float] = []
    pruned_scores: list[float] = []
    per_layer: dict[int, dict[str, list[float]]] = {}
    decisions_seen = 0

    for trace in traces:
        dp = by_id.get(trace.datapoint_id or "")
        if dp is None:
            continue
        for decision in trace.prune_decisions:
            layer = decision["layer"]
            sample = trace.node(decision["retained"][0]) if decision["retained"] else None
            if sample is None or sample["kind"] != "solution":
                continue  # comment-layer decisions are not solution comparisons
            decisions_seen += 1
            bucket = per_layer.setdefault(layer, {"retained": [], "pruned": []})
            for group, ids in (("retained", decision["retained"]), ("pruned", decision["pruned"])):
                for node_id in ids:
                    verdict = judge.verdict(trace.node(node_id)["content"], dp)
                    if verdict.overall is None:
                        continue
                    bucket[group].append(verdict.overall)
                    (retained_scores if group == "retained" else pruned_scores).append(
                        verdict.overall
                    )

    def mean(values: list[float]) -> float | None:
        return sum(values) / len(values) if values else None

    return {
        "retained_mean": mean(retained_scores),
        "pruned_mean": mean(pruned_scores),
        "no_pruning": decisions_seen == 0,
        "decision_count": decisions_seen,
        "layers": {
            str(layer): {
                "retained_mean": mean(groups["retained"]),
                "pruned_mean": mean(groups["pruned"]),
            }
            for layer, groups in sorted(per_layer.items())
        },
    }
