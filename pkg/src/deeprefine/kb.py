"""Triple knowledge base with atomic edit operators and JSONL persistence.

The store keeps set semantics over (head, relation, tail): re-inserting an
existing triple is a no-op outcome, not an error. Mutations bump a revision
counter so callers can detect whether a batch actually changed anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InvalidTriple, ParseError, UnknownItem


@dataclass(frozen=True)
class Triple:
    """One (head, relation, tail) fact. Equality ignores source_id."""

    head: str
    relation: str
    tail: str
    source_id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("head", "relation", "tail"):
            value = getattr(self, name)
            if not isinstance(value, str):
                raise InvalidTriple(f"{name} must be a string, got {type(value).__name__}")
            trimmed = value.strip()
            if not trimmed:
                raise InvalidTriple(f"{name} is empty after trimming")
            object.__setattr__(self, name, trimmed)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head, self.relation, self.tail)

    def to_dict(self) -> dict:
        d = {"head": self.head, "relation": self.relation, "tail": self.tail}
        if self.source_id is not None:
            d["source_id"] = self.source_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Triple":
        return cls(
            head=d["head"],
            relation=d["relation"],
            tail=d["tail"],
            source_id=d.get("source_id"),
        )


class EditOutcome(Enum):
    APPLIED = "applied"
    NOOP_DUPLICATE = "noop_duplicate"
    NOOP_MISSING = "noop_missing"


class KnowledgeBase:
    """Mutable triple store. Single-writer; hand out snapshots to readers."""

    def __init__(self, triples: Iterable[Triple] = (), strict_replace: bool = False):
        self._triples: set[Triple] = set(triples)
        self.strict_replace = strict_replace
        self.revision = 0
        self._adjacency_cache: tuple[int, dict[str, set[Triple]]] | None = None

    # -- views ------------------------------------------------------------

    @property
    def triples(self) -> frozenset[Triple]:
        return frozenset(self._triples)

    @property
    def items(self) -> frozenset[str]:
        out: set[str] = set()
        for t in self._triples:
            out.add(t.head)
            out.add(t.tail)
        return frozenset(out)

    @property
    def relations(self) -> frozenset[str]:
        return frozenset(t.relation for t in self._triples)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, t: Triple) -> bool:
        return t in self._triples

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return self._triples == other._triples

    def sorted_triples(self) -> list[Triple]:
        return sorted(self._triples, key=lambda t: t.key)

    def _adjacency(self) -> dict[str, set[Triple]]:
        cached = self._adjacency_cache
        if cached is not None and cached[0] == self.revision:
            return cached[1]
        index: dict[str, set[Triple]] = {}
        for t in self._triples:
            index.setdefault(t.head, set()).add(t)
            index.setdefault(t.tail, set()).add(t)
        self._adjacency_cache = (self.revision, index)
        return index

    def neighbors(self, item: str) -> set[Triple]:
        """All triples whose head or tail equals item; empty for unknown items."""
        return set(self._adjacency().get(item, ()))

    # -- edits ------------------------------------------------------------

    def insert_triple(self, t: Triple) -> EditOutcome:
        if t in self._triples:
            return EditOutcome.NOOP_DUPLICATE
        self._triples.add(t)
        self.revision += 1
        return EditOutcome.APPLIED

    def delete_triple(self, t: Triple) -> EditOutcome:
        if t not in self._triples:
            return EditOutcome.NOOP_MISSING
        self._triples.discard(t)
        self.revision += 1
        return EditOutcome.APPLIED

    def replace_item(self, old: str, new: str) -> EditOutcome:
        """Rewrite every occurrence of item `old` to `new` in heads and tails.

        Rewrites may collide with existing triples; collisions deduplicate,
        so the triple count never grows.
        """
        old = old.strip()
        new = new.strip()
        if not old or not new:
            raise InvalidTriple("replace_item arguments must be non-empty")
        if old == new:
            raise InvalidTriple("replace_item requires old != new")
        if old not in self.items:
            if self.strict_replace:
                raise UnknownItem(f"item not in KB: {old!r}")
            return EditOutcome.NOOP_MISSING
        incident = self.neighbors(old)
        for t in incident:
            self._triples.discard(t)
            rewritten = Triple(
                head=new if t.head == old else t.head,
                relation=t.relation,
                tail=new if t.tail == old else t.tail,
                source_id=t.source_id,
            )
            self._triples.add(rewritten)
        self.revision += 1
        return EditOutcome.APPLIED

    # -- snapshot / persistence -------------------------------------------

    def snapshot(self) -> "KnowledgeBase":
        """Logical copy unaffected by later edits to either side."""
        copy = KnowledgeBase(self._triples, strict_replace=self.strict_replace)
        copy.revision = self.revision
        return copy

    def save(self, path: str | Path) -> None:
        lines = [json.dumps(t.to_dict(), ensure_ascii=False) for t in self.sorted_triples()]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, strict_replace: bool = False) -> "KnowledgeBase":
        kb = cls(strict_replace=strict_replace)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    triple = Triple.from_dict(obj)
                except (json.JSONDecodeError, KeyError, TypeError, InvalidTriple) as exc:
                    raise ParseError(f"line {lineno}: {exc}", line=lineno) from exc
                kb._triples.add(triple)
        return kb
