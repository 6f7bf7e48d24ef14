"""The five comparable enforcement strategies and their decision functions.

Three baselines model what existing controls can do: static limits (set and
pray), reactive user-space control (observe pressure, then kill after a
reaction latency), and predictive limits from historical peak percentiles.
The two proposed strategies enforce in-band: graduated in-kernel escalation
(throttle, then freeze, preferring degradation over termination) and
intent-driven coordination (graduated plus the hint/feedback loop).

Everything here is a pure decision function; escalation state is owned by
the engine per workload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from .cgmodel import Priority
from .intent import HintPolicyConfig
from .trace import MIB


class PolicyKind(str, Enum):
    STATIC = "static"
    REACTIVE = "reactive"
    PREDICTIVE = "predictive"
    GRADUATED = "graduated"
    INTENT = "intent"


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class GraduatedParams:
    delay_slope_ms_per_mb: float = 10.0
    max_delay_ms: float = 2000.0
    freeze_after_consecutive_throttles: int = 20
    feedback_after_frozen_ms: float = 5000.0
    kill_as_last_resort: bool = True

    def __post_init__(self) -> None:
        if self.delay_slope_ms_per_mb < 0:
            raise PolicyError("delay slope must be >= 0")
        if self.max_delay_ms <= 0:
            raise PolicyError("max_delay_ms must be > 0")
        if self.freeze_after_consecutive_throttles < 1:
            raise PolicyError("freeze threshold must be >= 1")
        if self.feedback_after_frozen_ms < 0:
            raise PolicyError("feedback_after_frozen_ms must be >= 0")


@dataclass(frozen=True)
class ReactiveParams:
    reaction_latency_ms: float = 50.0
    pressure_threshold: float = 0.95
    window_ms: float = 1000.0
    action: str = "kill_lowest_priority"

    def __post_init__(self) -> None:
        if self.reaction_latency_ms < 0:
            raise PolicyError("reaction latency must be >= 0")
        if not 0 < self.pressure_threshold <= 1:
            raise PolicyError("pressure_threshold must be in (0, 1]")
        if self.window_ms <= 0:
            raise PolicyError("window_ms must be > 0")


@dataclass(frozen=True)
class PredictiveParams:
    percentile: float = 95.0
    history_peaks: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 < self.percentile <= 100:
            raise PolicyError("percentile must be in (0, 100]")


@dataclass(frozen=True)
class IntentParams:
    graduated: GraduatedParams = field(default_factory=GraduatedParams)
    hints: HintPolicyConfig = field(default_factory=HintPolicyConfig)
    reduction_factor: float = 0.5
    max_retries: int = 2

    def __post_init__(self) -> None:
        if not 0 < self.reduction_factor < 1:
            raise PolicyError("reduction_factor must be in (0, 1)")
        if self.max_retries < 0:
            raise PolicyError("max_retries must be >= 0")


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    params: GraduatedParams | ReactiveParams | PredictiveParams | IntentParams | None = None

    @staticmethod
    def static() -> "PolicySpec":
        return PolicySpec(PolicyKind.STATIC, None)

    @staticmethod
    def reactive(params: ReactiveParams | None = None) -> "PolicySpec":
        return PolicySpec(PolicyKind.REACTIVE, params or ReactiveParams())

    @staticmethod
    def predictive(params: PredictiveParams | None = None) -> "PolicySpec":
        return PolicySpec(PolicyKind.PREDICTIVE, params or PredictiveParams())

    @staticmethod
    def graduated(params: GraduatedParams | None = None) -> "PolicySpec":
        return PolicySpec(PolicyKind.GRADUATED, params or GraduatedParams())

    @staticmethod
    def intent(params: IntentParams | None = None) -> "PolicySpec":
        return PolicySpec(PolicyKind.INTENT, params or IntentParams())

    @property
    def is_graduated_family(self) -> bool:
        return self.kind in (PolicyKind.GRADUATED, PolicyKind.INTENT)

    @property
    def graduated_params(self) -> GraduatedParams:
        if self.kind is PolicyKind.GRADUATED:
            assert isinstance(self.params, GraduatedParams)
            return self.params
        if self.kind is PolicyKind.INTENT:
            assert isinstance(self.params, IntentParams)
            return self.params.graduated
        raise PolicyError(f"{self.kind.value} policy has no graduated parameters")

    def to_dict(self) -> dict[str, Any]:
        params: dict[str, Any] = {}
        p = self.params
        if isinstance(p, GraduatedParams):
            params = _graduated_dict(p)
        elif isinstance(p, ReactiveParams):
            params = {
                "reaction_latency_ms": p.reaction_latency_ms,
                "pressure_threshold": p.pressure_threshold,
                "window_ms": p.window_ms,
                "action": p.action,
            }
        elif isinstance(p, PredictiveParams):
            params = {
                "percentile": p.percentile,
                "history_peaks": list(p.history_peaks),
            }
        elif isinstance(p, IntentParams):
            params = {
                "graduated": _graduated_dict(p.graduated),
                "hint_limits": {
                    "low_bytes": p.hints.low_bytes,
                    "medium_bytes": p.hints.medium_bytes,
                    "high_bytes": p.hints.high_bytes,
                },
                "reduction_factor": p.reduction_factor,
                "max_retries": p.max_retries,
            }
        return {"kind": self.kind.value, "params": params}

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "PolicySpec":
        try:
            kind = PolicyKind(data["kind"])
        except (KeyError, ValueError) as exc:
            raise PolicyError(f"bad policy kind: {exc}") from exc
        raw = data.get("params") or {}
        if kind is PolicyKind.STATIC:
            return PolicySpec.static()
        if kind is PolicyKind.REACTIVE:
            return PolicySpec.reactive(ReactiveParams(**raw))
        if kind is PolicyKind.PREDICTIVE:
            raw = dict(raw)
            raw["history_peaks"] = tuple(raw.get("history_peaks", ()))
            return PolicySpec.predictive(PredictiveParams(**raw))
        if kind is PolicyKind.GRADUATED:
            return PolicySpec.graduated(GraduatedParams(**raw))
        raw = dict(raw)
        gp = GraduatedParams(**raw.pop("graduated", {}))
        hints_raw = raw.pop("hint_limits", {})
        hints = HintPolicyConfig(**hints_raw) if hints_raw else HintPolicyConfig()
        return PolicySpec.intent(IntentParams(graduated=gp, hints=hints, **raw))


def default_policy(kind: PolicyKind) -> PolicySpec:
    return {
        PolicyKind.STATIC: PolicySpec.static,
        PolicyKind.REACTIVE: PolicySpec.reactive,
        PolicyKind.PREDICTIVE: PolicySpec.predictive,
        PolicyKind.GRADUATED: PolicySpec.graduated,
        PolicyKind.INTENT: PolicySpec.intent,
    }[kind]()


def _graduated_dict(p: GraduatedParams) -> dict[str, Any]:
    return {
        "delay_slope_ms_per_mb": p.delay_slope_ms_per_mb,
        "max_delay_ms": p.max_delay_ms,
        "freeze_after_consecutive_throttles": p.freeze_after_consecutive_throttles,
        "feedback_after_frozen_ms": p.feedback_after_frozen_ms,
        "kill_as_last_resort": p.kill_as_last_resort,
    }


# --- decision functions -----------------------------------------------------


@dataclass(frozen=True)
class PressureSignal:
    """What a throttle decision can see: overall utilization, the node that
    breached its soft limit (if any), how far over it is, and whether a
    high-priority workload is currently blocked on memory."""

    global_utilization: float
    breaching_node: int | None
    overshoot_bytes: int
    high_priority_stalled: bool


def throttle_delay(
    spec: PolicySpec, node_priority: Priority, signal: PressureSignal
) -> float:
    """Delay (ms) to impose on the next allocation of a node under pressure.

    Only the graduated family delays, and only low-priority nodes: the delay
    grows linearly with the overshoot up to ``max_delay_ms``, and jumps
    straight to the maximum while a high-priority workload is stalled. The
    baselines have no delay mechanism (reactive acts via kill instead).
    """
    if not spec.is_graduated_family:
        return 0.0
    if node_priority is Priority.HIGH:
        return 0.0
    p = spec.graduated_params
    if signal.high_priority_stalled:
        return p.max_delay_ms
    overshoot_mb = signal.overshoot_bytes / MIB
    return min(max(p.delay_slope_ms_per_mb * overshoot_mb, 0.0), p.max_delay_ms)


class EscalationAction(str, Enum):
    NONE = "none"
    THROTTLE = "throttle"
    FREEZE = "freeze"
    FEEDBACK = "feedback"
    KILL = "kill"


@dataclass
class EscalationState:
    """Per-node ladder position, owned by the engine.

    ``consecutive_throttles`` includes the throttle being decided; it resets
    on any successful unthrottled charge. ``retries_allowed`` is zero unless
    the intent feedback channel is available for the current tool call.
    """

    consecutive_throttles: int = 0
    frozen: bool = False
    frozen_elapsed_ms: float = 0.0
    retries_done: int = 0
    retries_allowed: int = 0


def graduated_step(state: EscalationState, params: GraduatedParams) -> EscalationAction:
    """One rung of the escalation ladder: throttle, freeze, feedback, kill.

    Kill is reachable only after the feedback channel existed and was
    exhausted, and only with ``kill_as_last_resort``; without a feedback
    channel a frozen node simply stays frozen (the engine thaws it after the
    feedback window and lets it try again).
    """
    if not state.frozen:
        if state.consecutive_throttles < params.freeze_after_consecutive_throttles:
            return EscalationAction.THROTTLE
        return EscalationAction.FREEZE
    if state.frozen_elapsed_ms < params.feedback_after_frozen_ms:
        return EscalationAction.NONE
    if state.retries_done < state.retries_allowed:
        return EscalationAction.FEEDBACK
    if params.kill_as_last_resort and state.retries_allowed > 0:
        return EscalationAction.KILL
    return EscalationAction.NONE


@dataclass(frozen=True)
class ScheduledAction:
    action: str
    triggered_at_ms: float
    execute_at_ms: float


def reactive_decide(
    history: Sequence[tuple[float, float]],
    params: ReactiveParams,
    now_ms: float,
) -> ScheduledAction | None:
    """PSI-daemon-style decision: when mean utilization over the observation
    window crosses the threshold, schedule a kill one reaction latency in the
    future. The caller re-validates at execution time and skips the action if
    pressure has resolved in the meantime."""
    window = [u for ts, u in history if now_ms - params.window_ms <= ts <= now_ms]
    if not window:
        return None
    if sum(window) / len(window) >= params.pressure_threshold:
        return ScheduledAction(
            action=params.action,
            triggered_at_ms=now_ms,
            execute_at_ms=now_ms + params.reaction_latency_ms,
        )
    return None


def predictive_limit(history_peaks: Sequence[int], percentile: float) -> int:
    """Nearest-rank percentile of historical peaks, used as next-run
    memory.max. Permutation-invariant in the history."""
    if not history_peaks:
        raise PolicyError("predictive limit needs a non-empty history")
    if not 0 < percentile <= 100:
        raise PolicyError("percentile must be in (0, 100]")
    ordered = sorted(history_peaks)
    rank = math.ceil(percentile / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile over arbitrary floats; 0.0 for empty input."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = math.ceil(percentile / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]
