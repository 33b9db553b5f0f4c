"""Controlled-defect benchmark construction.

Injects incompleteness, incorrectness, or redundancy defects into per-sample
KBs using the same action DSL the refiner emits, then keeps only samples
whose RAG F1 is near-perfect before corruption and badly degraded after.
Two defect sources exist: a deterministic oracle that picks answer-bearing
triples from the golds (the test default), and a model-driven source via a
corruption gateway role.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .actions import (
    ActionKind,
    RefinementAction,
    apply_actions,
    parse_actions,
    render_actions,
)
from .errors import DeepRefineError, NoTarget, ParseError
from .gateway import ChatClient, ChatRequest, extract_tagged
from .kb import KnowledgeBase, Triple
from .pipeline import QuerySample
from .retrieval import EmbeddingProvider, top_k_triples, triple_text
from .rewards import read_answer, span_check, token_f1

logger = logging.getLogger(__name__)

ERROR_TYPES = ("incompleteness", "incorrectness", "redundancy")


@dataclass
class CorruptionSpec:
    error_type: str
    max_actions: int = 5
    target_top_n: int = 5
    f1_keep_min: float = 0.95
    f1_drop_max: float = 0.6
    redundancy_mode: str = "alias"  # alias | duplicate
    fine_grained_replace: bool = False

    def __post_init__(self):
        if self.error_type not in ERROR_TYPES:
            raise ValueError(f"unknown error_type {self.error_type!r}")
        if self.max_actions < 1:
            raise ValueError("max_actions must be >= 1")
        if not 0.0 <= self.f1_drop_max < self.f1_keep_min <= 1.0:
            raise ValueError("need 0 <= f1_drop_max < f1_keep_min <= 1")
        if self.redundancy_mode not in ("alias", "duplicate"):
            raise ValueError(f"unknown redundancy_mode {self.redundancy_mode!r}")


def answer_bearing_triples(target_triples: Sequence[Triple],
                           golds: Sequence[str]) -> list[Triple]:
    """Triples whose text contains a gold answer span, in deterministic order."""
    hits = [t for t in target_triples if span_check(triple_text(t), golds)]
    return sorted(hits, key=lambda t: t.key)


def _gold_field(t: Triple, golds: Sequence[str]) -> str:
    """Which field carries the answer; tail wins ties."""
    if span_check(t.tail, golds):
        return "tail"
    if span_check(t.head, golds):
        return "head"
    return "tail"


def corrupt_incompleteness(kb: KnowledgeBase, target_triples: Sequence[Triple],
                           spec: CorruptionSpec,
                           golds: Sequence[str]) -> list[RefinementAction]:
    """Remove answer-critical triples: one delete per target, capped."""
    hits = answer_bearing_triples(target_triples, golds)
    if not hits:
        raise NoTarget("no answer-bearing triple in target scope")
    return [RefinementAction(ActionKind.DELETE_EDGE, t.key)
            for t in hits[:spec.max_actions]]


def corrupt_incorrectness(kb: KnowledgeBase, target_triples: Sequence[Triple],
                          spec: CorruptionSpec,
                          golds: Sequence[str]) -> list[RefinementAction]:
    """Rewrite the answer-bearing field of targeted triples to a wrong value.

    Each rewrite is a delete + insert pair; pairs count toward the action
    cap, so at most floor(max_actions / 2) triples are mutated.
    """
    hits = answer_bearing_triples(target_triples, golds)
    if not hits:
        raise NoTarget("no answer-bearing triple in target scope")
    actions: list[RefinementAction] = []
    for i, t in enumerate(hits):
        if len(actions) + 2 > spec.max_actions:
            break
        wrong = f"something else entirely ({i + 1})"
        if _gold_field(t, golds) == "tail":
            mutated = (t.head, t.relation, wrong)
        else:
            mutated = (wrong, t.relation, t.tail)
        actions.append(RefinementAction(ActionKind.DELETE_EDGE, t.key))
        actions.append(RefinementAction(ActionKind.INSERT_EDGE, mutated))
    if not actions:
        raise NoTarget("action cap too small for one delete+insert pair")
    return actions


def default_alias(item: str) -> str:
    """Vague coreference form: keep only the head noun, or nothing at all.

    Multi-word items keep their last word ("Samantha's phone number" becomes
    "the aforementioned number"); single-word items would keep everything,
    so they collapse to a fully opaque reference instead.
    """
    words = item.split()
    if len(words) < 2:
        return "the aforementioned entity"
    return f"the aforementioned {words[-1]}"


def corrupt_redundancy(kb: KnowledgeBase, target_triples: Sequence[Triple],
                       spec: CorruptionSpec, golds: Sequence[str],
                       alias_map: dict[str, str] | None = None,
                       ) -> list[RefinementAction]:
    """Introduce ambiguity: alias rewrites or near-duplicate inserts.

    Alias mode replaces the answer-bearing item with a vaguer coreference;
    with fine_grained_replace it edits only the single targeted edge
    (delete + insert) instead of a global replace_node.
    """
    hits = answer_bearing_triples(target_triples, golds)
    if not hits:
        raise NoTarget("no answer-bearing triple in target scope")
    actions: list[RefinementAction] = []
    if spec.redundancy_mode == "duplicate":
        for t in hits[:spec.max_actions]:
            actions.append(RefinementAction(
                ActionKind.INSERT_EDGE, (t.head, "is related to", t.tail)))
        return actions
    aliased: set[str] = set()
    for t in hits:
        field_name = _gold_field(t, golds)
        item = t.tail if field_name == "tail" else t.head
        if item in aliased:
            continue
        alias = (alias_map or {}).get(item, default_alias(item))
        if alias == item:
            continue
        if spec.fine_grained_replace:
            if len(actions) + 2 > spec.max_actions:
                break
            mutated = ((t.head, t.relation, alias) if field_name == "tail"
                       else (alias, t.relation, t.tail))
            actions.append(RefinementAction(ActionKind.DELETE_EDGE, t.key))
            actions.append(RefinementAction(ActionKind.INSERT_EDGE, mutated))
        else:
            if len(actions) + 1 > spec.max_actions:
                break
            actions.append(RefinementAction(ActionKind.REPLACE_NODE, (item, alias)))
        aliased.add(item)
    if not actions:
        raise NoTarget("no aliasable item within the action cap")
    return actions


_CORRUPTORS = {
    "incompleteness": corrupt_incompleteness,
    "incorrectness": corrupt_incorrectness,
    "redundancy": corrupt_redundancy,
}


def oracle_corruption(kb: KnowledgeBase, target_triples: Sequence[Triple],
                      spec: CorruptionSpec,
                      golds: Sequence[str]) -> list[RefinementAction]:
    return _CORRUPTORS[spec.error_type](kb, target_triples, spec, golds)


def model_corruption(kb: KnowledgeBase, target_triples: Sequence[Triple],
                     spec: CorruptionSpec, golds: Sequence[str],
                     client: ChatClient) -> list[RefinementAction]:
    """Ask a corruption-model role for a defect batch in the action DSL."""
    triples_str = "\n".join(triple_text(t) for t in target_triples) or "(empty)"
    system = (
        "You inject controlled defects into a knowledge graph for benchmark "
        f"construction. Defect type: {spec.error_type}. Emit at most "
        f"{spec.max_actions} actions using insert_edge(...), delete_edge(...) "
        "and replace_node(...), separated by '|', inside <refinement> tags.")
    user = f"Target triples:\n{triples_str}"
    raw = client.complete(ChatRequest(role_name="corruption", system=system, user=user))
    content = extract_tagged(raw, "refinement").content
    actions = parse_actions(content, max_actions=spec.max_actions)
    if not actions:
        raise NoTarget("corruption model emitted no actions")
    return actions


@dataclass
class BenchmarkSample:
    query: QuerySample
    clean_kb: KnowledgeBase
    corrupted_kb: KnowledgeBase
    corruption_actions: list[RefinementAction]
    metadata: dict = field(default_factory=dict)


def build_benchmark(samples: Sequence[tuple[QuerySample, KnowledgeBase]],
                    spec: CorruptionSpec, provider: EmbeddingProvider,
                    reader_client: ChatClient,
                    corruption_client: ChatClient | None = None,
                    rejected: list | None = None) -> list[BenchmarkSample]:
    """Three-stage pipeline: keep near-perfect samples, corrupt the retrieved
    scope, keep samples the corruption actually breaks.

    Per-sample failures are recorded in `rejected` (if given) and skipped.
    """
    accepted: list[BenchmarkSample] = []
    for sample, clean_kb in samples:
        try:
            draft = read_answer(sample.question, clean_kb, spec.target_top_n,
                                provider, reader_client, query_id=sample.id)
            pre_f1 = token_f1(draft, sample.golden_answers)
            if pre_f1 <= spec.f1_keep_min:
                raise NoTarget(f"pre-corruption F1 {pre_f1:.3f} <= {spec.f1_keep_min}")
            scope = top_k_triples(sample.question, clean_kb, spec.target_top_n,
                                  provider, query_id=sample.id).triples
            if corruption_client is not None:
                actions = model_corruption(clean_kb, scope, spec,
                                           sample.golden_answers, corruption_client)
            else:
                actions = oracle_corruption(clean_kb, scope, spec,
                                            sample.golden_answers)
            if len(actions) > spec.max_actions:
                raise NoTarget(f"{len(actions)} actions exceed cap {spec.max_actions}")
            corrupted_kb, _ = apply_actions(clean_kb, actions)
            post = read_answer(sample.question, corrupted_kb, spec.target_top_n,
                               provider, reader_client, query_id=sample.id)
            post_f1 = token_f1(post, sample.golden_answers)
            if post_f1 >= spec.f1_drop_max:
                raise NoTarget(f"post-corruption F1 {post_f1:.3f} >= {spec.f1_drop_max}")
        except DeepRefineError as exc:
            logger.info("sample %s rejected: %s", sample.id, exc)
            if rejected is not None:
                rejected.append((sample.id, str(exc)))
            continue
        accepted.append(BenchmarkSample(
            query=sample,
            clean_kb=clean_kb,
            corrupted_kb=corrupted_kb,
            corruption_actions=actions,
            metadata={
                "error_type": spec.error_type,
                "n_actions": len(actions),
                "pre_f1": pre_f1,
                "post_f1": post_f1,
                "redundancy_mode": (spec.redundancy_mode
                                    if spec.error_type == "redundancy" else None),
            },
        ))
    return accepted


# -- persistence -----------------------------------------------------------

def save_benchmark(samples: Sequence[BenchmarkSample], out_dir: str | Path,
                   manifest_extra: dict | None = None) -> Path:
    """Write per-sample KB files plus benchmark.jsonl and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "benchmark.jsonl"
    with open(index_path, "w", encoding="utf-8") as fh:
        for bench in samples:
            clean_path = out_dir / f"{bench.query.id}.clean.jsonl"
            corrupt_path = out_dir / f"{bench.query.id}.corrupted.jsonl"
            bench.clean_kb.save(clean_path)
            bench.corrupted_kb.save(corrupt_path)
            fh.write(json.dumps({
                "query": bench.query.to_dict(),
                "clean_kb": clean_path.name,
                "corrupted_kb": corrupt_path.name,
                "corruption_actions": render_actions(bench.corruption_actions),
                "metadata": bench.metadata,
            }, ensure_ascii=False) + "\n")
    manifest = {"n_samples": len(samples)}
    manifest.update(manifest_extra or {})
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return index_path


def load_benchmark(out_dir: str | Path) -> list[BenchmarkSample]:
    """Load samples and verify each corrupted KB replays from its clean KB."""
    out_dir = Path(out_dir)
    samples: list[BenchmarkSample] = []
    with open(out_dir / "benchmark.jsonl", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            clean_kb = KnowledgeBase.load(out_dir / obj["clean_kb"])
            corrupted_kb = KnowledgeBase.load(out_dir / obj["corrupted_kb"])
            actions = parse_actions(obj["corruption_actions"])
            replayed, _ = apply_actions(clean_kb, actions)
            if replayed.triples != corrupted_kb.triples:
                raise ParseError(
                    f"line {lineno}: corrupted KB does not replay from clean KB",
                    line=lineno)
            samples.append(BenchmarkSample(
                query=QuerySample.from_dict(obj["query"]),
                clean_kb=clean_kb,
                corrupted_kb=corrupted_kb,
                corruption_actions=actions,
                metadata=obj.get("metadata", {}),
            ))
    return samples
