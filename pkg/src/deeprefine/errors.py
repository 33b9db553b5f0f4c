"""Exception hierarchy shared across the refinement engine."""

from __future__ import annotations


class DeepRefineError(Exception):
    """Base class for all engine errors."""


class InvalidTriple(DeepRefineError):
    pass


class UnknownItem(DeepRefineError):
    pass


class ParseError(DeepRefineError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class ProviderError(DeepRefineError):
    pass


class MaxHopsExceeded(DeepRefineError):
    pass


class MissingTag(DeepRefineError):
    pass


class UnclosedTag(DeepRefineError):
    pass


class JudgeParseError(DeepRefineError):
    pass


class TransportError(DeepRefineError):
    pass


class MockMissFixture(DeepRefineError):
    pass


class EmptyHistory(DeepRefineError):
    pass


class ActionSyntaxError(DeepRefineError):
    """Raised by the action parser; carries the character position."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"at {position}: {reason}")
        self.position = position
        self.reason = reason


class BatchAborted(DeepRefineError):
    def __init__(self, action_index: int, reason: str):
        super().__init__(f"action {action_index}: {reason}")
        self.action_index = action_index
        self.reason = reason


class NoTarget(DeepRefineError):
    pass


class EmptyGroup(DeepRefineError):
    pass


class SinkError(DeepRefineError):
    pass


class ConfigError(DeepRefineError):
    pass
