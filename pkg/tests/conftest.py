from __future__ import annotations

import json
from pathlib import Path

import pytest

from ragtree.bench import Datapoint


@pytest.fixture
def two_datapoints() -> list[Datapoint]:
    return [
        Datapoint(
            id="dp-1",
            domain="bridges",
            requirement="Span a seismic valley with a rail bridge.",
            solution="Use a base-isolated truss design.",
            analytical_knowledge=["Earthquake impact is mainly horizontal vibration"],
            technical_knowledge=["Nano bearings reduce vibration"],
            explanation="Isolation addresses the dominant hazard.",
        ),
        Datapoint(
            id="dp-2",
            domain="bridges",
            requirement="Cross a flood plain with a highway bridge.",
            solution="Elevated piers with scour protection.",
            analytical_knowledge=["Flood scour undermines shallow foundations"],
            technical_knowledge=["Nano bearings reduce vibration"],
            explanation="Scour drives the foundation choice.",
        ),
    ]


def write_mock_script(path: Path, **overrides) -> Path:
    """Write a mock script file; keyword arguments override the base script."""
    script = {"seed": 0}
    script.update(overrides)
    path.write_text(json.dumps(script), encoding="utf-8")
    return path


@pytest.fixture
def mock_script_file(tmp_path: Path) -> Path:
    return write_mock_script(tmp_path / "mock.json")
