"""Client contract for the model roles, prompt rendering, and tag extraction.

System prompts live as versioned resource files and are rendered verbatim;
user prompts fill in the question / triples / history fields. All model
outputs are exchanged through <tag>...</tag> blocks.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

from .errors import (
    EmptyHistory,
    JudgeParseError,
    MissingTag,
    MockMissFixture,
    TransportError,
    UnclosedTag,
)
from .kb import Triple
from .retrieval import Subgraph

logger = logging.getLogger(__name__)

ROLE_REFINER_JUDGE = "refiner_judge"
ROLE_REFINER_ABDUCTION = "refiner_abduction"
ROLE_REFINER_ACTIONS = "refiner_actions"
ROLE_ANSWER_JUDGE = "answer_judge"
ROLE_READER = "reader"
ROLE_CORRUPTION = "corruption"

_TEMPLATE_FILES = {
    ROLE_REFINER_JUDGE: "judge_system.txt",
    ROLE_REFINER_ABDUCTION: "abduction_system.txt",
    ROLE_REFINER_ACTIONS: "refine_system.txt",
    ROLE_ANSWER_JUDGE: "answer_judge_system.txt",
    ROLE_READER: "reader_system.txt",
}


def load_system_template(role_name: str) -> str:
    filename = _TEMPLATE_FILES[role_name]
    return resources.files("deeprefine.resources").joinpath(filename).read_text(
        encoding="utf-8").rstrip("\n")


@dataclass
class ChatRequest:
    role_name: str
    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.system.strip() or not self.user.strip():
            raise ValueError("system and user prompts must be non-empty")


@dataclass
class TaggedOutput:
    tag: str
    content: str
    raw: str


class ChatClient(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


# -- rendering -------------------------------------------------------------

def render_triple_line(t: Triple) -> str:
    return f"<`{t.head}',`{t.relation}',`{t.tail}'>"


def render_triples(triples: Sequence[Triple]) -> str:
    if not triples:
        return "(empty)"
    return "\n".join(render_triple_line(t) for t in triples)


def render_judge_prompt(question: str, sg: Subgraph) -> ChatRequest:
    user = (f"Question: {question}\n"
            f"Knowledge Graph (KG) context:\n{render_triples(sg.triples)}")
    return ChatRequest(role_name=ROLE_REFINER_JUDGE,
                       system=load_system_template(ROLE_REFINER_JUDGE), user=user)


def render_abduction_prompt(history) -> ChatRequest:
    """Serialize the last `horizon` interaction records as numbered steps.

    `history` is a pipeline.InteractionHistory; only its question, horizon
    and records (hop, subgraph, answerable) are used.
    """
    records = list(history.records)
    if not records:
        raise EmptyHistory("cannot abduce from an empty interaction history")
    kept = records[-history.horizon:]
    steps = []
    for rec in kept:
        steps.append(
            f"Step {rec.hop}:\n"
            f"Question: {history.question}\n"
            f"Triples:\n{render_triples(rec.subgraph.triples)}\n"
            f"Judgement: {'Yes' if rec.answerable else 'No'}"
        )
    user = "Interaction history:\n" + "\n\n".join(steps)
    return ChatRequest(role_name=ROLE_REFINER_ABDUCTION,
                       system=load_system_template(ROLE_REFINER_ABDUCTION), user=user)


def render_actions_prompt(original_text: str | None, sg: Subgraph, question: str,
                          error_reasons: str) -> ChatRequest:
    user = (f"Original Text: {original_text if original_text else '(unavailable)'}\n"
            f"KG:\n{render_triples(sg.triples)}\n"
            f"Question: {question}\n"
            f"Error reasons: {error_reasons}")
    return ChatRequest(role_name=ROLE_REFINER_ACTIONS,
                       system=load_system_template(ROLE_REFINER_ACTIONS), user=user)


def render_reader_prompt(question: str, triples: Sequence[Triple]) -> ChatRequest:
    user = (f"Question: {question}\n"
            f"Knowledge Graph (KG) context:\n{render_triples(triples)}")
    return ChatRequest(role_name=ROLE_READER,
                       system=load_system_template(ROLE_READER), user=user)


def render_answer_judge_prompt(pred: str, golds: Sequence[str],
                               question: str | None = None) -> ChatRequest:
    lines = []
    if question:
        lines.append(f"Question: {question}")
    lines.append(f"Golden answers: {json.dumps(list(golds), ensure_ascii=False)}")
    lines.append(f"Predicted answer: {pred if pred.strip() else '(empty)'}")
    return ChatRequest(role_name=ROLE_ANSWER_JUDGE,
                       system=load_system_template(ROLE_ANSWER_JUDGE),
                       user="\n".join(lines))


# -- tagged output ---------------------------------------------------------

def extract_tagged(raw: str, tag: str) -> TaggedOutput:
    """Content strictly between the first <tag> and the next </tag>."""
    open_tok, close_tok = f"<{tag}>", f"</{tag}>"
    start = raw.find(open_tok)
    if start < 0:
        raise MissingTag(f"no {open_tok} in model output")
    body_start = start + len(open_tok)
    end = raw.find(close_tok, body_start)
    if end < 0:
        raise UnclosedTag(f"{open_tok} without {close_tok}")
    if raw.find(open_tok, end) >= 0:
        logger.warning("multiple <%s> blocks in one output; using the first", tag)
    return TaggedOutput(tag=tag, content=raw[body_start:end], raw=raw)


def parse_judge_content(content: str) -> bool:
    verdict = content.strip().lower()
    if verdict == "yes":
        return True
    if verdict == "no":
        return False
    raise JudgeParseError(f"judge content is neither Yes nor No: {content!r}")


# -- clients ---------------------------------------------------------------

def user_digest(user_text: str) -> str:
    """Stable fixture key for a user prompt."""
    return hashlib.sha256(user_text.encode("utf-8")).hexdigest()[:16]


class ScriptedMockClient:
    """Replays responses keyed by (role_name, digest of user text).

    Unkeyed requests fail loudly so tests never silently drift from their
    fixtures.
    """

    def __init__(self, fixtures: dict[tuple[str, str], str] | None = None):
        self._fixtures = dict(fixtures or {})

    def add(self, role_name: str, user_text: str, response: str) -> None:
        self._fixtures[(role_name, user_digest(user_text))] = response

    def complete(self, req: ChatRequest) -> str:
        key = (req.role_name, user_digest(req.user))
        try:
            return self._fixtures[key]
        except KeyError:
            raise MockMissFixture(f"no fixture for role={key[0]} digest={key[1]}") from None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (role, digest), response in sorted(self._fixtures.items()):
                fh.write(json.dumps({"role_name": role, "user_digest": digest,
                                     "response": response}, ensure_ascii=False) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedMockClient":
        fixtures: dict[tuple[str, str], str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    fixtures[(obj["role_name"], obj["user_digest"])] = obj["response"]
        return cls(fixtures)


class SequenceMockClient:
    """Replays a fixed per-role response sequence; handy for loop tests."""

    def __init__(self, responses_by_role: dict[str, Sequence[str]]):
        self._queues = {role: list(seq) for role, seq in responses_by_role.items()}

    def complete(self, req: ChatRequest) -> str:
        queue = self._queues.get(req.role_name)
        if not queue:
            raise MockMissFixture(f"no scripted responses left for role={req.role_name}")
        return queue.pop(0)


class RetryingClient:
    """Retries transient transport failures, then gives up."""

    def __init__(self, inner: ChatClient, retries: int = 2):
        self.inner = inner
        self.retries = retries

    def complete(self, req: ChatRequest) -> str:
        last: TransportError | None = None
        for _ in range(self.retries + 1):
            try:
                return self.inner.complete(req)
            except TransportError as exc:
                last = exc
        assert last is not None
        raise last


class HttpChatClient:
    """Minimal client for the chat wire contract.

    Request body: {model, messages: [{role, content}], temperature, max_tokens};
    the response must expose a single text field at choices[0].message.content.
    """

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, req: ChatRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers,
                                 timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise TransportError(str(exc)) from exc
