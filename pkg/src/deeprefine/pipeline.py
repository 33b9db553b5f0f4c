"""Per-query refinement orchestration and the sequential refinement stream.

Each query goes through three reasoning steps: the answerability judgement
loop (retrieve, judge, expand until answerable or out of hops), error
abduction over the interaction history, and refinement action generation.
Queries answerable at hop 0 are skipped; any step failure leaves the KB
untouched.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import gateway
from .actions import (
    ApplyReport,
    RefinementAction,
    apply_actions,
    parse_actions,
    render_actions,
)
from .errors import DeepRefineError, EmptyHistory
from .kb import KnowledgeBase
from .retrieval import (
    EmbeddingProvider,
    RetrievalConfig,
    Subgraph,
    expand,
    top_k_triples,
)

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 3

# keyword -> defect category, used only for reporting
_CATEGORY_KEYWORDS = {
    "incompleteness": ("missing", "absent", "incomplete", "lack"),
    "incorrectness": ("incorrect", "wrong", "contradict", "error"),
    "redundancy": ("ambiguous", "duplicate", "redundant", "coreference"),
}


@dataclass
class QuerySample:
    id: str
    question: str
    golden_answers: list[str] = field(default_factory=list)
    source_text: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "question": self.question,
             "golden_answers": list(self.golden_answers)}
        if self.source_text is not None:
            d["source_text"] = self.source_text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuerySample":
        return cls(id=str(d["id"]), question=d["question"],
                   golden_answers=list(d.get("golden_answers", [])),
                   source_text=d.get("source_text"))


def load_queries(path: str | Path) -> list[QuerySample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                samples.append(QuerySample.from_dict(json.loads(line)))
    return samples


@dataclass
class InteractionRecord:
    hop: int
    subgraph: Subgraph
    answerable: bool
    raw_judge_text: str


@dataclass
class InteractionHistory:
    query_id: str
    question: str
    records: list[InteractionRecord] = field(default_factory=list)
    horizon: int = DEFAULT_HORIZON

    @property
    def final_answerable(self) -> bool:
        return bool(self.records) and self.records[-1].answerable


@dataclass
class IssueReport:
    text: str
    categories: set[str]
    raw: str


@dataclass
class RefineOutcome:
    query_id: str
    skipped: bool = False
    failed: str | None = None
    history: InteractionHistory | None = None
    issues: IssueReport | None = None
    actions: list[RefinementAction] = field(default_factory=list)
    report: ApplyReport | None = None
    # (role_name, user prompt, model response) per gateway call, in order
    transcript: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def status(self) -> str:
        if self.failed is not None:
            return "failed"
        return "skipped" if self.skipped else "refined"


def judge_answerable(question: str, sg: Subgraph,
                     client: gateway.ChatClient) -> tuple[bool, str, str]:
    """One judge call; returns (answerable, raw model text, user prompt)."""
    req = gateway.render_judge_prompt(question, sg)
    raw = client.complete(req)
    tagged = gateway.extract_tagged(raw, "judge")
    return gateway.parse_judge_content(tagged.content), raw, req.user


def run_judgement_loop(sample: QuerySample, kb: KnowledgeBase, cfg: RetrievalConfig,
                       provider: EmbeddingProvider, client: gateway.ChatClient,
                       horizon: int = DEFAULT_HORIZON,
                       transcript: list | None = None) -> InteractionHistory:
    """Retrieve, judge, and expand until answerable or out of hops."""
    history = InteractionHistory(query_id=sample.id, question=sample.question,
                                 horizon=horizon)
    sg = top_k_triples(sample.question, kb, cfg.top_n, provider, query_id=sample.id)
    while True:
        answerable, raw, user = judge_answerable(sample.question, sg, client)
        if transcript is not None:
            transcript.append((gateway.ROLE_REFINER_JUDGE, user, raw))
        history.records.append(InteractionRecord(
            hop=sg.hop, subgraph=sg, answerable=answerable, raw_judge_text=raw))
        if answerable or sg.hop >= cfg.max_hops:
            return history
        sg = expand(sample.question, kb, sg, cfg, provider)


def tag_categories(text: str) -> set[str]:
    lowered = text.lower()
    return {
        category
        for category, keywords in _CATEGORY_KEYWORDS.items()
        if any(k in lowered for k in keywords)
    }


def abduce_issues(history: InteractionHistory, client: gateway.ChatClient,
                  transcript: list | None = None) -> IssueReport:
    """Error abduction over the last `horizon` interaction records."""
    if not history.records:
        raise EmptyHistory("no interaction records to abduce from")
    req = gateway.render_abduction_prompt(history)
    raw = client.complete(req)
    if transcript is not None:
        transcript.append((gateway.ROLE_REFINER_ABDUCTION, req.user, raw))
    content = gateway.extract_tagged(raw, "abduction").content.strip()
    return IssueReport(text=content, categories=tag_categories(content), raw=raw)


def generate_actions(question: str, sg_final: Subgraph, issues: IssueReport,
                     original_text: str | None, client: gateway.ChatClient,
                     transcript: list | None = None) -> list[RefinementAction]:
    """Render the action prompt and parse the <refinement> block."""
    req = gateway.render_actions_prompt(original_text, sg_final, question, issues.text)
    raw = client.complete(req)
    if transcript is not None:
        transcript.append((gateway.ROLE_REFINER_ACTIONS, req.user, raw))
    content = gateway.extract_tagged(raw, "refinement").content
    if not content.strip():
        return []
    return parse_actions(content)


def refine_query(sample: QuerySample, kb: KnowledgeBase, cfg: RetrievalConfig,
                 provider: EmbeddingProvider, client: gateway.ChatClient,
                 horizon: int = DEFAULT_HORIZON,
                 batch_cap: int = 64) -> tuple[KnowledgeBase, RefineOutcome]:
    """Full three-step refinement of one query.

    Returns the (possibly unchanged) KB and the outcome. On any step error
    the input KB is returned untouched and the outcome carries the reason.
    """
    outcome = RefineOutcome(query_id=sample.id)
    try:
        history = run_judgement_loop(sample, kb, cfg, provider, client,
                                     horizon=horizon, transcript=outcome.transcript)
        outcome.history = history
        if history.records[0].answerable:
            outcome.skipped = True
            return kb, outcome
        outcome.issues = abduce_issues(history, client, transcript=outcome.transcript)
        sg_final = history.records[-1].subgraph
        outcome.actions = generate_actions(
            sample.question, sg_final, outcome.issues, sample.source_text,
            client, transcript=outcome.transcript)
        refined, report = apply_actions(kb, outcome.actions, batch_cap=batch_cap)
        outcome.report = report
        return refined, outcome
    except DeepRefineError as exc:
        logger.warning("refinement of query %s failed: %s", sample.id, exc)
        outcome.failed = f"{type(exc).__name__}: {exc}"
        return kb, outcome


@dataclass
class StreamReport:
    entries: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(json.dumps(e, ensure_ascii=False) + "\n" for e in self.entries),
            encoding="utf-8")


def run_refine_stream(samples: Sequence[QuerySample], kb: KnowledgeBase,
                      cfg: RetrievalConfig, provider: EmbeddingProvider,
                      client: gateway.ChatClient,
                      selected_ids: Sequence[str] | None = None,
                      horizon: int = DEFAULT_HORIZON, batch_cap: int = 64,
                      deterministic_timing: bool = False,
                      ) -> tuple[KnowledgeBase, StreamReport, list[RefineOutcome]]:
    """Refine queries sequentially; later queries see earlier refinements.

    Per-query failures are recorded and the stream continues. With
    deterministic_timing, wall_ms is reported as 0 so two identical runs
    produce byte-identical reports.
    """
    if not samples:
        raise ValueError("query stream is empty")
    if selected_ids is not None:
        wanted = set(selected_ids)
        samples = [s for s in samples if s.id in wanted]
    report = StreamReport()
    outcomes: list[RefineOutcome] = []
    for sample in samples:
        started = time.perf_counter()
        kb, outcome = refine_query(sample, kb, cfg, provider, client,
                                   horizon=horizon, batch_cap=batch_cap)
        wall_ms = 0 if deterministic_timing else int(
            (time.perf_counter() - started) * 1000)
        outcomes.append(outcome)
        report.entries.append({
            "id": sample.id,
            "skipped": outcome.skipped,
            "hops": (len(outcome.history.records) - 1) if outcome.history else 0,
            "n_actions": len(outcome.actions),
            "outcome": outcome.status,
            "wall_ms": wall_ms,
        })
    return kb, report, outcomes
