"""The refinement-action language: insert_edge / delete_edge / replace_node.

The parser accepts the quote dialects seen in real model outputs: double
quotes, backquote/quote pairs (`...'), straight single quotes, and curly
unicode quotes. Splitting happens only at top level, so commas, pipes and
parentheses inside quoted arguments are preserved. The canonical renderer
emits double quotes and single '|' separators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import ActionSyntaxError, BatchAborted
from .kb import EditOutcome, KnowledgeBase, Triple


class ActionKind(Enum):
    INSERT_EDGE = "insert_edge"
    DELETE_EDGE = "delete_edge"
    REPLACE_NODE = "replace_node"


_ARITY = {
    ActionKind.INSERT_EDGE: 3,
    ActionKind.DELETE_EDGE: 3,
    ActionKind.REPLACE_NODE: 2,
}

_NAME_TO_KIND = {k.value: k for k in ActionKind}

# open-quote char -> close-quote char
_QUOTE_PAIRS = {
    '"': '"',
    "`": "'",
    "'": "'",
    "‘": "’",
    "“": "”",
}


@dataclass(frozen=True)
class RefinementAction:
    kind: ActionKind
    args: tuple[str, ...]

    def __post_init__(self):
        args = tuple(a.strip() for a in self.args)
        if len(args) != _ARITY[self.kind]:
            raise ValueError(
                f"{self.kind.value} takes {_ARITY[self.kind]} args, got {len(args)}")
        if any(not a for a in args):
            raise ValueError(f"{self.kind.value} has an empty argument")
        if self.kind is ActionKind.REPLACE_NODE and args[0] == args[1]:
            raise ValueError("replace_node requires old != new")
        object.__setattr__(self, "args", args)

    def triple(self) -> Triple:
        if self.kind is ActionKind.REPLACE_NODE:
            raise ValueError("replace_node has no triple form")
        return Triple(*self.args)


def insert_edge(head: str, relation: str, tail: str) -> RefinementAction:
    return RefinementAction(ActionKind.INSERT_EDGE, (head, relation, tail))


def delete_edge(head: str, relation: str, tail: str) -> RefinementAction:
    return RefinementAction(ActionKind.DELETE_EDGE, (head, relation, tail))


def replace_node(old: str, new: str) -> RefinementAction:
    return RefinementAction(ActionKind.REPLACE_NODE, (old, new))


# -- parsing ---------------------------------------------------------------

class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self) -> None:
        while not self.eof() and self.text[self.pos].isspace():
            self.pos += 1

    def fail(self, reason: str):
        raise ActionSyntaxError(self.pos, reason)

    def read_name(self) -> str:
        start = self.pos
        while not self.eof() and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self.pos += 1
        if self.pos == start:
            self.fail("expected an operator name")
        return self.text[start:self.pos]

    def read_quoted(self) -> tuple[str, str]:
        """Returns (argument text, open-quote char)."""
        open_q = self.peek()
        if open_q not in _QUOTE_PAIRS:
            self.fail(f"expected a quoted argument, got {open_q!r}")
        close_q = _QUOTE_PAIRS[open_q]
        self.pos += 1
        start = self.pos
        i = self.pos
        text = self.text
        while i < len(text):
            if text[i] == close_q:
                # The closer must be followed (after whitespace) by , or ).
                j = i + 1
                while j < len(text) and text[j].isspace():
                    j += 1
                if j < len(text) and text[j] in ",)":
                    arg = text[start:i]
                    self.pos = i + 1
                    return arg, open_q
            i += 1
        self.fail(f"unbalanced quote opened with {open_q!r}")
        raise AssertionError  # unreachable

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            self.fail(f"expected {ch!r}, got {self.peek()!r}")
        self.pos += 1


def parse_actions(content: str, strict_quotes: bool = False,
                  max_actions: int | None = None) -> list[RefinementAction]:
    """Parse the inside of a <refinement> block into an action list.

    Actions are separated by top-level '|'; a trailing '|' is tolerated.
    In strict mode, mixing quote styles across the batch is rejected.
    """
    sc = _Scanner(content)
    actions: list[RefinementAction] = []
    quote_styles: set[str] = set()
    sc.skip_ws()
    while not sc.eof():
        start_pos = sc.pos
        name = sc.read_name()
        kind = _NAME_TO_KIND.get(name)
        if kind is None:
            raise ActionSyntaxError(start_pos, f"unknown operator {name!r}")
        sc.skip_ws()
        sc.expect("(")
        args: list[str] = []
        while True:
            sc.skip_ws()
            arg, open_q = sc.read_quoted()
            args.append(arg)
            quote_styles.add(open_q)
            sc.skip_ws()
            if sc.peek() == ",":
                sc.pos += 1
                continue
            sc.expect(")")
            break
        try:
            actions.append(RefinementAction(kind, tuple(args)))
        except ValueError as exc:
            raise ActionSyntaxError(start_pos, str(exc)) from exc
        if max_actions is not None and len(actions) > max_actions:
            raise ActionSyntaxError(sc.pos, f"more than {max_actions} actions in one batch")
        sc.skip_ws()
        if sc.eof():
            break
        sc.expect("|")
        sc.skip_ws()  # trailing '|' leaves us at eof here
    if strict_quotes and len(quote_styles) > 1:
        raise ActionSyntaxError(0, f"mixed quote styles: {sorted(quote_styles)}")
    return actions


def render_action(action: RefinementAction) -> str:
    rendered = ", ".join(f'"{a}"' for a in action.args)
    return f"{action.kind.value}({rendered})"


def render_actions(actions: list[RefinementAction]) -> str:
    """Canonical batch text: double quotes, single '|' separators."""
    return "|".join(render_action(a) for a in actions)


# -- validation ------------------------------------------------------------

@dataclass(frozen=True)
class ValidationWarning:
    code: str  # absent_triple | duplicate | unknown_item | conflict_ordering
    action_index: int
    message: str


def validate_actions(actions: list[RefinementAction],
                     kb: KnowledgeBase) -> list[ValidationWarning]:
    """Dry-run lint of a batch against the current KB; never raises."""
    warnings: list[ValidationWarning] = []
    present = set(kb.triples)
    items = set(kb.items)
    deleted: dict[tuple[str, str, str], int] = {}
    for i, action in enumerate(actions):
        if action.kind is ActionKind.INSERT_EDGE:
            t = action.triple()
            if t.key in deleted:
                warnings.append(ValidationWarning(
                    "conflict_ordering", i,
                    f"insert of triple deleted at action {deleted[t.key]}"))
            if t in present:
                warnings.append(ValidationWarning(
                    "duplicate", i, f"insert duplicates existing triple {t.key}"))
            present.add(t)
            items.update((t.head, t.tail))
        elif action.kind is ActionKind.DELETE_EDGE:
            t = action.triple()
            if t not in present:
                warnings.append(ValidationWarning(
                    "absent_triple", i, f"delete of absent triple {t.key}"))
            else:
                present.discard(t)
                deleted[t.key] = i
        else:
            old, new = action.args
            if old not in items:
                warnings.append(ValidationWarning(
                    "unknown_item", i, f"replace of absent item {old!r}"))
            else:
                items.discard(old)
                items.add(new)
    return warnings


# -- application -----------------------------------------------------------

@dataclass
class ApplyReport:
    outcomes: list[str] = field(default_factory=list)
    counts_by_kind: dict[str, int] = field(default_factory=dict)
    kb_revision_before: int = 0
    kb_revision_after: int = 0

    def to_dict(self) -> dict:
        return {
            "outcomes": list(self.outcomes),
            "counts_by_kind": dict(self.counts_by_kind),
            "kb_revision_before": self.kb_revision_before,
            "kb_revision_after": self.kb_revision_after,
        }


DEFAULT_BATCH_CAP = 64

_OUTCOME_NAMES = {
    EditOutcome.APPLIED: "applied",
    EditOutcome.NOOP_DUPLICATE: "noop_duplicate",
    EditOutcome.NOOP_MISSING: "noop_missing",
}


def apply_actions(kb: KnowledgeBase, actions: list[RefinementAction],
                  batch_cap: int = DEFAULT_BATCH_CAP) -> tuple[KnowledgeBase, ApplyReport]:
    """Apply a batch left-to-right on a snapshot; all-or-nothing.

    The input KB is never mutated; the edited snapshot is returned. NoOp
    outcomes (duplicate insert, missing delete/replace) do not abort the
    batch; invariant violations do, raising BatchAborted.
    """
    if len(actions) > batch_cap:
        raise BatchAborted(0, f"batch of {len(actions)} actions exceeds cap {batch_cap}")
    working = kb.snapshot()
    report = ApplyReport(kb_revision_before=kb.revision)
    for i, action in enumerate(actions):
        try:
            if action.kind is ActionKind.INSERT_EDGE:
                outcome = working.insert_triple(action.triple())
            elif action.kind is ActionKind.DELETE_EDGE:
                outcome = working.delete_triple(action.triple())
            else:
                outcome = working.replace_item(*action.args)
        except Exception as exc:
            raise BatchAborted(i, str(exc)) from exc
        name = _OUTCOME_NAMES[outcome]
        report.outcomes.append(name)
        if outcome is EditOutcome.APPLIED:
            report.counts_by_kind[action.kind.value] = (
                report.counts_by_kind.get(action.kind.value, 0) + 1)
    report.kb_revision_after = working.revision
    return working, report


def invert_actions(actions: list[RefinementAction]) -> list[RefinementAction]:
    """Exact inverse batch: reversed order, each operator mirrored."""
    inverse: list[RefinementAction] = []
    for action in reversed(actions):
        if action.kind is ActionKind.INSERT_EDGE:
            inverse.append(RefinementAction(ActionKind.DELETE_EDGE, action.args))
        elif action.kind is ActionKind.DELETE_EDGE:
            inverse.append(RefinementAction(ActionKind.INSERT_EDGE, action.args))
        else:
            old, new = action.args
            inverse.append(RefinementAction(ActionKind.REPLACE_NODE, (new, old)))
    return inverse
