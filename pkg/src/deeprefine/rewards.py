"""Answer metrics, the gain-beyond-draft reward, and rollout logging.

Accuracy follows the usual QA conventions: token-level F1 over normalized
tokens, plus a generation-accuracy bit that is a span match OR an LLM
judge verdict. The shaped reward maps the (draft, refined) accuracy
transition onto four fixed cells.
"""

from __future__ import annotations

import json
import re
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import EmptyGroup, SinkError
from .gateway import (
    ChatClient,
    extract_tagged,
    parse_judge_content,
    render_answer_judge_prompt,
    render_reader_prompt,
)
from .kb import KnowledgeBase
from .retrieval import EmbeddingProvider, top_k_triples

_ARTICLES = {"a", "an", "the"}
_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)

# (draft_acc, refined_acc) -> shaped reward
SHAPED_REWARDS = {
    (0, 1): 1.0,
    (1, 0): -0.3,
    (1, 1): 0.2,
    (0, 0): 0.0,
}


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop articles, split on whitespace."""
    text = _PUNCT_RE.sub(" ", text.lower())
    return [tok for tok in text.split() if tok not in _ARTICLES]


def token_f1(pred: str, golds: Sequence[str]) -> float:
    """Max token-level F1 of pred against any gold answer."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_toks = normalize_tokens(pred)
    best = 0.0
    for gold in golds:
        gold_toks = normalize_tokens(gold)
        if not pred_toks or not gold_toks:
            best = max(best, 1.0 if pred_toks == gold_toks else 0.0)
            continue
        overlap = sum((Counter(pred_toks) & Counter(gold_toks)).values())
        if overlap == 0:
            continue
        precision = overlap / len(pred_toks)
        recall = overlap / len(gold_toks)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def span_check(pred: str, golds: Sequence[str]) -> bool:
    """True iff any normalized gold is a contiguous token run inside pred."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_toks = normalize_tokens(pred)
    for gold in golds:
        gold_toks = normalize_tokens(gold)
        if not gold_toks:
            if not pred_toks:
                return True
            continue
        n = len(gold_toks)
        for i in range(len(pred_toks) - n + 1):
            if pred_toks[i:i + n] == gold_toks:
                return True
    return False


def gen_acc(pred: str, golds: Sequence[str], judge_client: ChatClient,
            question: str | None = None) -> int:
    """Generation accuracy: span match short-circuits; otherwise the judge decides."""
    if span_check(pred, golds):
        return 1
    req = render_answer_judge_prompt(pred, golds, question=question)
    raw = judge_client.complete(req)
    verdict = parse_judge_content(extract_tagged(raw, "judge").content)
    return 1 if verdict else 0


@dataclass
class AnswerRecord:
    query_id: str
    draft_answer: str
    refined_answer: str
    golds: list[str]
    question: str | None = None

    def __post_init__(self):
        if not self.golds:
            raise ValueError("golds must be non-empty")


@dataclass
class RewardRecord:
    query_id: str
    draft_acc: int
    refined_acc: int
    gbd: int
    shaped: float
    f1_draft: float
    f1_refined: float

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "draft_acc": self.draft_acc,
            "refined_acc": self.refined_acc,
            "gbd": self.gbd,
            "shaped_reward": self.shaped,
            "f1_draft": self.f1_draft,
            "f1_refined": self.f1_refined,
        }


def gbd(rec: AnswerRecord, judge_client: ChatClient) -> RewardRecord:
    """Both generation accuracies, their difference, and the shaped reward."""
    draft = gen_acc(rec.draft_answer, rec.golds, judge_client, question=rec.question)
    refined = gen_acc(rec.refined_answer, rec.golds, judge_client, question=rec.question)
    return RewardRecord(
        query_id=rec.query_id,
        draft_acc=draft,
        refined_acc=refined,
        gbd=refined - draft,
        shaped=SHAPED_REWARDS[(draft, refined)],
        f1_draft=token_f1(rec.draft_answer, rec.golds),
        f1_refined=token_f1(rec.refined_answer, rec.golds),
    )


@dataclass
class GroupAdvantage:
    rewards: list[float]
    mean: float
    std: float
    advantages: list[float]


def group_advantages(rewards: Sequence[float]) -> GroupAdvantage:
    """Standardize rewards within one group: (R - mean) / population std.

    Constant groups (std 0) get all-zero advantages.
    """
    if not rewards:
        raise EmptyGroup("cannot standardize an empty reward group")
    rewards = list(rewards)
    mean = statistics.fmean(rewards)
    std = statistics.pstdev(rewards)
    if std == 0.0:
        advantages = [0.0] * len(rewards)
    else:
        advantages = [(r - mean) / std for r in rewards]
    return GroupAdvantage(rewards=rewards, mean=mean, std=std, advantages=advantages)


def read_answer(question: str, kb: KnowledgeBase, n: int, provider: EmbeddingProvider,
                reader_client: ChatClient, query_id: str = "") -> str:
    """RAG answer: top-n retrieval as context, then one reader call."""
    sg = top_k_triples(question, kb, n, provider, query_id=query_id)
    req = render_reader_prompt(question, sg.triples)
    return reader_client.complete(req).strip()


# -- rollout logging -------------------------------------------------------

def log_rollout(entry: dict, sink: str | Path) -> None:
    """Append one rollout record (one JSON line) for the external trainer.

    Normative fields: group_id, query_id, prompts, responses, actions,
    draft_acc, refined_acc, gbd, shaped_reward, advantage.
    """
    required = {"group_id", "query_id", "prompts", "responses", "actions",
                "draft_acc", "refined_acc", "gbd", "shaped_reward", "advantage"}
    missing = required - entry.keys()
    if missing:
        raise SinkError(f"rollout entry missing fields: {sorted(missing)}")
    try:
        with open(sink, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise SinkError(str(exc)) from exc


def rollout_entry(group_id: str, query_id: str, prompts: list[str],
                  responses: list[str], actions_text: str,
                  reward: RewardRecord) -> dict:
    return {
        "group_id": group_id,
        "query_id": query_id,
        "prompts": prompts,
        "responses": responses,
        "actions": actions_text,
        "draft_acc": reward.draft_acc,
        "refined_acc": reward.refined_acc,
        "gbd": reward.gbd,
        "shaped_reward": reward.shaped,
        "advantage": None,
    }


def fill_advantages_file(path: str | Path) -> None:
    """Post-pass: standardize shaped rewards per group_id and rewrite the log."""
    path = Path(path)
    try:
        lines = [json.loads(line) for line in
                 path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except OSError as exc:
        raise SinkError(str(exc)) from exc
    groups: dict[str, list[dict]] = {}
    for entry in lines:
        groups.setdefault(entry["group_id"], []).append(entry)
    for members in groups.values():
        result = group_advantages([m["shaped_reward"] for m in members])
        for member, adv in zip(members, result.advantages):
            member["advantage"] = adv
    try:
        path.write_text(
            "".join(json.dumps(e, ensure_ascii=False) + "\n" for e in lines),
            encoding="utf-8")
    except OSError as exc:
        raise SinkError(str(exc)) from exc
