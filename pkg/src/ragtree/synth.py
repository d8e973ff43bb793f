"""Synthetic dataset generation for offline runs and tests.

Produces datasets with an exactly known datapoint count and unique-knowledge
count, so loader and knowledge-base counts can be checked against the
generator instead of hand-counted fixtures.
"""

from __future__ import annotations

import random

from .bench import Datapoint


def synthesize_dataset(
    domain: str = "synthetic",
    n_datapoints: int = 119,
    n_unique_knowledge: int = 554,
    duplicate_rate: float = 0.25,
    seed: int = 0,
) -> list[Datapoint]:
    """Generate `n_datapoints` records whose knowledge strings contain exactly
    `n_unique_knowledge` distinct entries after normalization.

    Unique strings are dealt round-robin across datapoints, alternating
    analytical/technical. A `duplicate_rate` fraction of datapoints then
    re-use an earlier string (sometimes with case/whitespace noise) to
    exercise dedup during knowledge-base construction.
    """
    if n_unique_knowledge < 1 or n_datapoints < 1:
        raise ValueError("need at least one datapoint and one knowledge string")
    rng = random.Random(seed)

    unique = [
        f"{domain} principle {i:04d}: factor f{i} governs constraint c{i % 17}"
        for i in range(n_unique_knowledge)
    ]
    datapoints = [
        Datapoint(
            id=f"{domain}-{i:04d}",
            domain=domain,
            requirement=(
                f"Design a plan for scenario {i} in the {domain} domain subject to "
                f"constraints c{i % 17} and c{(i + 5) % 17}."
            ),
            solution=f"Reference plan {i}: mitigate c{i % 17} first, then address c{(i + 5) % 17}.",
            explanation=f"The expert applied factor f{i % n_unique_knowledge} before all else.",
        )
        for i in range(n_datapoints)
    ]

    for j, text in enumerate(unique):
        dp = datapoints[j % n_datapoints]
        if j % 2 == 0:
            dp.analytical_knowledge.append(text)
        else:
            dp.technical_knowledge.append(text)

    # Redundant mentions: same knowledge cited by another datapoint, with
    # formatting noise that normalization must cancel out.
    for i, dp in enumerate(datapoints):
        if rng.random() < duplicate_rate:
            text = unique[rng.randrange(n_unique_knowledge)]
            noisy = text.upper() if rng.random() < 0.5 else "  " + text.replace(" ", "  ")
            if i % 2 == 0:
                dp.analytical_knowledge.append(noisy)
            else:
                dp.technical_knowledge.append(noisy)

    for dp in datapoints:
        dp.validate()
    return datapoints
