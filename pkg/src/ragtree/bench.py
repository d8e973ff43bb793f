"""Benchmark dataset schema: datapoints, per-domain knowledge bases, stats.

File formats (both UTF-8, one JSON record per line):

dataset:  id, domain, requirement, solution, analytical_knowledge[],
          technical_knowledge[], explanation
kb:       id, kind, text, source_datapoint_ids[]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


DATASET_FIELDS = (
    "id",
    "domain",
    "requirement",
    "solution",
    "analytical_knowledge",
    "technical_knowledge",
    "explanation",
)

KB_FIELDS = ("id", "kind", "text", "source_datapoint_ids")

KNOWLEDGE_KINDS = ("analytical", "technical")


class DatasetError(ValueError):
    """Raised when a dataset or knowledge-base file violates the record format.

    Carries the offending record index and field name so callers can report
    exactly what is wrong.
    """

    def __init__(self, message: str, record: int | None = None, fields: str | None = None):
        self.record = record
        self.field = fields
        prefix = ""
        if record is not None:
            prefix += f"record {record}: "
        if fields is not None:
            prefix += f"field '{fields}': "
        super().__init__(prefix + message)


def normalize_text(text: str) -> str:
    """Canonical form used for knowledge dedup: lowercase, collapsed whitespace."""
    return " ".join(text.split()).lower()


@dataclass
class Datapoint:
    """One benchmark record: a requirement with its reference solution and the
    expert knowledge used to produce it."""

    id: str
    domain: str
    requirement: str
    solution: str
    analytical_knowledge: list[str] = field(default_factory=list)
    technical_knowledge: list[str] = field(default_factory=list)
    explanation: str = ""

    def validate(self, record: int | None = None) -> None:
        if not isinstance(self.id, str) or not self.id.strip():
            raise DatasetError("must be a non-empty string", record, "id")
        if not isinstance(self.domain, str) or not self.domain.strip():
            raise DatasetError("must be a non-empty string", record, "domain")
        for name in ("requirement", "solution"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise DatasetError("must be a non-empty string", record, name)
        for name in ("analytical_knowledge", "technical_knowledge"):
            entries = getattr(self, name)
            if not isinstance(entries, list):
                raise DatasetError("must be a list of strings", record, name)
            for i, entry in enumerate(entries):
                if not isinstance(entry, str) or not entry.strip():
                    raise DatasetError(f"entry {i} must be a non-empty string", record, name)
        if not isinstance(self.explanation, str):
            raise DatasetError("must be a string", record, "explanation")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in DATASET_FIELDS}

    @classmethod
    def from_dict(cls, data: dict, record: int | None = None) -> "Datapoint":
        if not isinstance(data, dict):
            raise DatasetError("record is not an object", record)
        missing = [name for name in DATASET_FIELDS if name not in data]
        if missing:
            raise DatasetError("missing", record, missing[0])
        extra = [name for name in data if name not in DATASET_FIELDS]
        if extra:
            raise DatasetError("unknown field", record, extra[0])
        dp = cls(**{name: data[name] for name in DATASET_FIELDS})
        dp.validate(record)
        return dp


@dataclass
class KnowledgeItem:
    """A deduplicated knowledge string with provenance back to datapoints."""

    id: str
    kind: str  # "analytical" or "technical", taken from the first occurrence
    text: str
    source_datapoint_ids: list[str] = field(default_factory=list)

    def validate(self, record: int | None = None) -> None:
        if not isinstance(self.id, str) or not self.id.strip():
            raise DatasetError("must be a non-empty string", record, "id")
        if self.kind not in KNOWLEDGE_KINDS:
            raise DatasetError(f"must be one of {KNOWLEDGE_KINDS}", record, "kind")
        if not isinstance(self.text, str) or not self.text.strip():
            raise DatasetError("must be a non-empty string", record, "text")
        if not isinstance(self.source_datapoint_ids, list) or not self.source_datapoint_ids:
            raise DatasetError("must be a non-empty list", record, "source_datapoint_ids")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in KB_FIELDS}

    @classmethod
    def from_dict(cls, data: dict, record: int | None = None) -> "KnowledgeItem":
        if not isinstance(data, dict):
            raise DatasetError("record is not an object", record)
        missing = [name for name in KB_FIELDS if name not in data]
        if missing:
            raise DatasetError("missing", record, missing[0])
        item = cls(**{name: data[name] for name in KB_FIELDS})
        item.validate(record)
        return item


@dataclass
class KnowledgeBase:
    """All deduplicated knowledge for one domain."""

    domain: str
    items: list[KnowledgeItem] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def validate(self) -> None:
        if not self.domain.strip():
            raise DatasetError("must be a non-empty string", fields="domain")
        seen: dict[str, str] = {}
        for i, item in enumerate(self.items):
            item.validate(i)
            key = normalize_text(item.text)
            if key in seen:
                raise DatasetError(
                    f"duplicate of item '{seen[key]}' after normalization", i, "text"
                )
            seen[key] = item.id


@dataclass
class BenchStats:
    """Collection sizes for one domain: N datapoints, M knowledge items."""

    domain: str
    datapoint_count: int
    knowledge_count: int

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "datapoint_count": self.datapoint_count,
            "knowledge_count": self.knowledge_count,
        }


def _dump_line(data: dict) -> str:
    return json.dumps(data, ensure_ascii=False, sort_keys=True)


def load_dataset(path: str | Path) -> list[Datapoint]:
    """Load a JSONL dataset file, validating every record.

    Preserves file order. Raises DatasetError naming the record index and
    field on the first malformed record.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    datapoints = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc}", len(datapoints)) from exc
            datapoints.append(Datapoint.from_dict(data, record=len(datapoints)))
    return datapoints


def save_dataset(datapoints: list[Datapoint], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for dp in datapoints:
            fh.write(_dump_line(dp.to_dict()) + "\n")


def load_kb(path: str | Path, domain: str | None = None) -> KnowledgeBase:
    """Load a JSONL knowledge-base file; domain defaults to the file stem."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"knowledge base file not found: {path}")
    items = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc}", len(items)) from exc
            items.append(KnowledgeItem.from_dict(data, record=len(items)))
    kb = KnowledgeBase(domain=domain or path.stem, items=items)
    kb.validate()
    return kb


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for item in kb.items:
            fh.write(_dump_line(item.to_dict()) + "\n")


def build_knowledge_base(datapoints: list[Datapoint]) -> KnowledgeBase:
    """Union all knowledge strings of one domain into a deduplicated base.

    Duplicates are detected by normalized exact match (lowercase, collapsed
    whitespace). Merged items keep the kind of the first occurrence and the
    union of source datapoint ids, in first-seen order. Deterministic: the
    same datapoints always produce the same knowledge base.
    """
    if not datapoints:
        raise DatasetError("cannot build a knowledge base from zero datapoints")
    domains = {dp.domain for dp in datapoints}
    if len(domains) > 1:
        raise DatasetError(f"datapoints span multiple domains: {sorted(domains)}")

    by_norm: dict[str, KnowledgeItem] = {}
    counter = 0
    for dp in datapoints:
        for kind, entries in (
            ("analytical", dp.analytical_knowledge),
            ("technical", dp.technical_knowledge),
        ):
            for text in entries:
                key = normalize_text(text)
                item = by_norm.get(key)
                if item is None:
                    counter += 1
                    by_norm[key] = KnowledgeItem(
                        id=f"k{counter:04d}",
                        kind=kind,
                        text=text,
                        source_datapoint_ids=[dp.id],
                    )
                elif dp.id not in item.source_datapoint_ids:
                    item.source_datapoint_ids.append(dp.id)
    kb = KnowledgeBase(domain=datapoints[0].domain, items=list(by_norm.values()))
    kb.validate()
    return kb


def compute_stats(datapoints: list[Datapoint], kb: KnowledgeBase) -> BenchStats:
    return BenchStats(
        domain=kb.domain,
        datapoint_count=len(datapoints),
        knowledge_count=len(kb.items),
    )
