"""ragtree: retrieval-augmented solution design via design/review tree search.

Grows a tree of candidate solutions and review comments over a per-domain
knowledge base, scores nodes by suffix logprobs, prunes to a beam, and
returns the best final-layer solution. Ships with benchmark dataset tooling,
single-round and ablation baselines, an LLM-judge evaluation harness, a
FastAPI service, and a CLI.
"""

__version__ = "0.1.0"
