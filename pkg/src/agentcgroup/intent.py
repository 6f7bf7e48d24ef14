"""Bidirectional intent protocol: upward resource hints, downward feedback.

Upward, an agent declares the expected footprint of its next tool call
through the ``AGENT_RESOURCE_HINT`` environment variable (grammar
``memory:(low|medium|high)``); the hint maps to a per-tool-call soft memory
limit. Downward, when a tool call is killed or throttled beyond recovery,
a natural-language feedback line is injected into its stderr so the agent
can retry with a smaller footprint. Hints are advisory; the feedback loop
corrects underestimates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .trace import MIB

HINT_ENV_VAR = "AGENT_RESOURCE_HINT"


class HintParseError(ValueError):
    pass


class ResourceKind(str, Enum):
    MEMORY = "memory"


class HintLevel(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class ResourceHint:
    resource: ResourceKind
    level: HintLevel


def parse_hint(value: str) -> ResourceHint:
    """Parse ``"<resource>:<level>"``, case-insensitive.

    Raises :class:`HintParseError` on anything outside the grammar; callers
    treat a failed parse as no hint, since hints are advisory.
    """
    parts = value.strip().lower().split(":")
    if len(parts) != 2:
        raise HintParseError(f"malformed hint {value!r} (expected resource:level)")
    resource_s, level_s = parts
    try:
        resource = ResourceKind(resource_s)
    except ValueError:
        raise HintParseError(f"unknown resource {resource_s!r}") from None
    try:
        level = HintLevel(level_s)
    except ValueError:
        raise HintParseError(f"unknown level {level_s!r}") from None
    return ResourceHint(resource=resource, level=level)


@dataclass(frozen=True)
class HintPolicyConfig:
    """Mapping from hint level to the per-tool-call soft memory limit."""

    low_bytes: int = 64 * MIB
    medium_bytes: int = 512 * MIB
    high_bytes: int | None = None  # unlimited

    def __post_init__(self) -> None:
        if self.low_bytes > self.medium_bytes:
            raise ValueError("hint mapping requires low <= medium")
        if self.high_bytes is not None and self.high_bytes < self.medium_bytes:
            raise ValueError("hint mapping requires high unlimited or >= medium")


def hint_to_limits(hint: ResourceHint, config: HintPolicyConfig) -> int | None:
    if hint.level is HintLevel.LOW:
        return config.low_bytes
    if hint.level is HintLevel.MEDIUM:
        return config.medium_bytes
    return config.high_bytes


class FeedbackKind(str, Enum):
    OOM_KILLED = "killed"
    THROTTLED = "throttled"


_SUGGESTION = (
    "reduce scope (e.g., run a subset of tests or lower parallelism) and retry."
)

_FEEDBACK_RE = re.compile(
    r"^\[agentcgroup\] tool call (killed|throttled): "
    r"peak=(\d+) MiB exceeded limit=(\d+) MiB\. Suggestion: .*$"
)


def _to_mib_half_up(n_bytes: int) -> int:
    return (n_bytes + MIB // 2) // MIB


@dataclass(frozen=True)
class FeedbackMessage:
    peak_mib: int
    limit_mib: int
    suggestion: str
    rendered: str


def render_feedback(
    peak_bytes: int, limit_bytes: int, kind: FeedbackKind
) -> FeedbackMessage:
    """Render the stderr feedback line. The format is fixed: downstream
    agents parse it, so the text is part of the wire contract."""
    if peak_bytes < 0 or limit_bytes < 0:
        raise ValueError("peak and limit must be >= 0")
    peak = _to_mib_half_up(peak_bytes)
    limit = _to_mib_half_up(limit_bytes)
    rendered = (
        f"[agentcgroup] tool call {kind.value}: "
        f"peak={peak} MiB exceeded limit={limit} MiB. Suggestion: {_SUGGESTION}"
    )
    return FeedbackMessage(
        peak_mib=peak, limit_mib=limit, suggestion=_SUGGESTION, rendered=rendered
    )


def parse_feedback(text: str) -> tuple[int, int, FeedbackKind]:
    """Recover (peak_bytes, limit_bytes, kind) from a rendered feedback line."""
    m = _FEEDBACK_RE.match(text)
    if m is None:
        raise ValueError(f"not a feedback message: {text!r}")
    kind = FeedbackKind(m.group(1))
    return int(m.group(2)) * MIB, int(m.group(3)) * MIB, kind


def adapt_on_feedback(
    series: Sequence[int], reduction_factor: float, max_retries: int
) -> list[tuple[int, ...]]:
    """Demand series the simulated agent would re-execute after feedback.

    Each retry scales the previous attempt's demand above its starting
    baseline by ``reduction_factor``; the baseline portion is untouched.
    Returns one series per permitted retry, in order.
    """
    if not 0 < reduction_factor < 1:
        raise ValueError("reduction_factor must be in (0, 1)")
    if max_retries < 0:
        raise ValueError("max_retries must be >= 0")
    base = series[0] if series else 0
    retries: list[tuple[int, ...]] = []
    current = tuple(series)
    for _ in range(max_retries):
        current = tuple(
            base + int(round(reduction_factor * (v - base))) for v in current
        )
        retries.append(current)
    return retries
