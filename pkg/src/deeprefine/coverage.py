"""Greedy maximum-coverage selection of queries to refine.

Each query contributes a coverage set: its top-k query-similar triples plus
up to m one-hop neighbor triples of the items in those, ranked by query
similarity. Greedy picks queries by marginal gain until the budget or the
coverage target is hit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .kb import KnowledgeBase
from .retrieval import EmbeddingProvider, _rank, top_k_triples

TripleKey = tuple[str, str, str]


@dataclass
class CoverageConfig:
    k: int = 10
    m: int = 500
    budget: int = 1000
    rho: float = 0.8

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")


@dataclass
class QueryCoverage:
    query_id: str
    elements: frozenset[TripleKey]


def coverage_set(question: str, kb: KnowledgeBase, cfg: CoverageConfig,
                 provider: EmbeddingProvider, query_id: str = "") -> QueryCoverage:
    """Top-k triples plus up to m highest-scoring one-hop neighbor triples."""
    seed = top_k_triples(question, kb, cfg.k, provider, query_id=query_id)
    elements: set[TripleKey] = {t.key for t in seed.triples}
    if cfg.m > 0:
        neighbor_pool = set()
        for item in seed.items:
            neighbor_pool |= kb.neighbors(item)
        neighbor_pool -= seed.triple_set
        ranked = _rank(question, neighbor_pool, provider)[:cfg.m]
        elements.update(t.key for _, t in ranked)
    return QueryCoverage(query_id=query_id, elements=frozenset(elements))


def coverage_fraction(selected_ids: Sequence[str],
                      covs: Sequence[QueryCoverage]) -> float:
    """Covered fraction of the union of all candidate sets; 1 when empty."""
    universe: set[TripleKey] = set()
    for cov in covs:
        universe |= cov.elements
    if not universe:
        return 1.0
    wanted = set(selected_ids)
    covered: set[TripleKey] = set()
    for cov in covs:
        if cov.query_id in wanted:
            covered |= cov.elements
    return len(covered) / len(universe)


def greedy_select(covs: Sequence[QueryCoverage], cfg: CoverageConfig,
                  report: list | None = None) -> list[str]:
    """Pick queries by marginal coverage gain (ties by query_id).

    Stops at the budget, at the coverage target rho, or when no remaining
    query adds a new element. An optional report list receives one dict
    per pick: {query_id, rank, new_elements, cumulative_fraction}.
    """
    if not covs:
        raise ValueError("no candidate queries")
    universe: set[TripleKey] = set()
    for cov in covs:
        universe |= cov.elements
    covered: set[TripleKey] = set()
    remaining = {cov.query_id: cov for cov in covs}
    selected: list[str] = []

    def fraction() -> float:
        return 1.0 if not universe else len(covered) / len(universe)

    while len(selected) < cfg.budget and fraction() < cfg.rho:
        best_id = None
        best_gain = 0
        for qid in sorted(remaining):
            gain = len(remaining[qid].elements - covered)
            if gain > best_gain:
                best_gain = gain
                best_id = qid
        if best_id is None:
            break  # nothing adds new coverage
        covered |= remaining.pop(best_id).elements
        selected.append(best_id)
        if report is not None:
            report.append({
                "query_id": best_id,
                "rank": len(selected),
                "new_elements": best_gain,
                "cumulative_fraction": fraction(),
            })
    return selected


def save_selection_report(entries: Sequence[dict], path: str | Path) -> None:
    Path(path).write_text(
        "".join(json.dumps(e, ensure_ascii=False) + "\n" for e in entries),
        encoding="utf-8")
