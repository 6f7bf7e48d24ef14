"""Trace data model, JSONL (de)serialization, and synthetic trace generation.

A trace records one sandboxed agent task: a memory/CPU sample series plus the
tool-call windows that structure it. Timestamps are virtual milliseconds from
task start; replay speed is a concern of the engine, never of the trace.

Memory everywhere in this package is integer bytes; the ``MIB`` constant is
the unit used for human-facing "MB" figures.
"""

from __future__ import annotations

import json
import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

MIB = 1024 * 1024


class TraceError(ValueError):
    """Invalid trace content (construction or parse)."""


class TraceParseError(TraceError):
    """Malformed trace file; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SynthesisError(TraceError):
    """Synthesis parameters cannot produce a valid trace."""


class ToolType(str, Enum):
    BASH = "Bash"
    READ = "Read"
    EDIT = "Edit"
    WRITE = "Write"
    SUB_AGENT = "SubAgent"
    WEB_SEARCH = "WebSearch"
    OTHER = "Other"


class BashCategory(str, Enum):
    TEST = "Test"
    PACKAGE_INSTALL = "PackageInstall"
    PYTHON_SNIPPET = "PythonSnippet"
    FILE_EXPLORATION = "FileExploration"
    GIT = "Git"
    OTHER = "Other"


@dataclass(frozen=True)
class Sample:
    """One resource sample: resident memory in bytes, CPU percent of one core."""

    ts_ms: int
    mem_bytes: int
    cpu_pct: float

    def __post_init__(self) -> None:
        if self.ts_ms < 0:
            raise TraceError(f"sample ts_ms must be >= 0, got {self.ts_ms}")
        if self.mem_bytes < 0:
            raise TraceError(f"sample mem_bytes must be >= 0, got {self.mem_bytes}")
        if self.cpu_pct < 0:
            raise TraceError(f"sample cpu_pct must be >= 0, got {self.cpu_pct}")


@dataclass(frozen=True)
class ToolCallEvent:
    """One tool invocation window. ``command``/``category`` exist iff Bash."""

    tool_type: ToolType
    start_ms: int
    end_ms: int
    command: str | None = None
    category: BashCategory | None = None

    def __post_init__(self) -> None:
        if self.start_ms >= self.end_ms:
            raise TraceError(
                f"tool call must have start_ms < end_ms, got [{self.start_ms}, {self.end_ms}]"
            )
        is_bash = self.tool_type is ToolType.BASH
        if is_bash and self.category is None:
            raise TraceError("Bash tool call requires a category")
        if not is_bash and self.category is not None:
            raise TraceError(f"category only valid for Bash, got {self.tool_type.value}")

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms

    def contains(self, ts_ms: int) -> bool:
        return self.start_ms <= ts_ms <= self.end_ms


@dataclass(frozen=True)
class TaskTrace:
    """Complete record of one agent task.

    Invariants enforced at construction: samples strictly increasing in time,
    tool calls ordered and non-overlapping, everything inside [0, total_ms],
    tool calls starting at or after the initialization phase ends.
    """

    task_id: str
    init_end_ms: int
    total_ms: int
    samples: tuple[Sample, ...]
    tool_calls: tuple[ToolCallEvent, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        if not 0 <= self.init_end_ms <= self.total_ms:
            raise TraceError(
                f"init_end_ms {self.init_end_ms} outside [0, {self.total_ms}]"
            )
        prev = -1
        for s in self.samples:
            if s.ts_ms <= prev:
                raise TraceError(f"non-monotonic timestamp at ts {s.ts_ms}")
            if s.ts_ms > self.total_ms:
                raise TraceError(f"sample ts {s.ts_ms} beyond total_ms {self.total_ms}")
            prev = s.ts_ms
        prev_end = None
        for tc in self.tool_calls:
            if tc.start_ms < self.init_end_ms:
                raise TraceError(
                    f"tool call at {tc.start_ms} starts before init_end_ms {self.init_end_ms}"
                )
            if tc.end_ms > self.total_ms:
                raise TraceError(f"tool call end {tc.end_ms} beyond total_ms")
            if prev_end is not None and tc.start_ms < prev_end:
                raise TraceError(
                    f"overlapping tool calls near {tc.start_ms} (previous ends {prev_end})"
                )
            prev_end = tc.end_ms

    @property
    def peak_bytes(self) -> int:
        return max((s.mem_bytes for s in self.samples), default=0)


def demand_at(trace: TaskTrace, t_ms: float) -> int:
    """Memory demand at an arbitrary instant, piecewise-linear between samples.

    Exact at sample points; held constant before the first and after the last
    sample. Raises for instants outside [0, total_ms].
    """
    if not 0 <= t_ms <= trace.total_ms:
        raise TraceError(f"t_ms {t_ms} outside trace range [0, {trace.total_ms}]")
    samples = trace.samples
    if not samples:
        return 0
    ts = [s.ts_ms for s in samples]
    i = bisect_right(ts, t_ms)
    if i == 0:
        return samples[0].mem_bytes
    if i == len(samples):
        return samples[-1].mem_bytes
    lo, hi = samples[i - 1], samples[i]
    if t_ms == lo.ts_ms:
        return lo.mem_bytes
    frac = (t_ms - lo.ts_ms) / (hi.ts_ms - lo.ts_ms)
    return int(round(lo.mem_bytes + frac * (hi.mem_bytes - lo.mem_bytes)))


# --- JSONL wire format ------------------------------------------------------
#
# One JSON object per line, UTF-8. The first line must be the meta record.
#   {"t":"meta","task_id":str,"init_end_ms":int,"total_ms":int}
#   {"t":"s","ms":int,"mem":int,"cpu":float}
#   {"t":"tc","tool":str,"start_ms":int,"end_ms":int,"cmd":str?,"cat":str?}
# Unknown keys are ignored; unknown record types are an error.


def parse_trace(content: bytes | str) -> TaskTrace:
    """Parse a JSONL trace. Rejects malformed input rather than repairing it."""
    if isinstance(content, bytes):
        content = content.decode("utf-8")
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    meta: dict | None = None
    samples: list[Sample] = []
    tool_calls: list[ToolCallEvent] = []
    prev_sample_ts = -1
    prev_tool_end: int | None = None

    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            raise TraceParseError("blank line", lineno)
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        if not isinstance(rec, dict):
            raise TraceParseError("record is not a JSON object", lineno)
        kind = rec.get("t")
        if lineno == 1:
            if kind != "meta":
                raise TraceParseError("missing meta record (must be first line)", 1)
            try:
                meta = {
                    "task_id": str(rec["task_id"]),
                    "init_end_ms": int(rec["init_end_ms"]),
                    "total_ms": int(rec["total_ms"]),
                }
            except KeyError as exc:
                raise TraceParseError(f"meta record missing key {exc}", 1) from exc
            continue
        if kind == "meta":
            raise TraceParseError("duplicate meta record", lineno)
        if kind == "s":
            try:
                sample = Sample(int(rec["ms"]), int(rec["mem"]), float(rec["cpu"]))
            except KeyError as exc:
                raise TraceParseError(f"sample missing key {exc}", lineno) from exc
            except TraceError as exc:
                raise TraceParseError(str(exc), lineno) from exc
            if sample.ts_ms <= prev_sample_ts:
                raise TraceParseError(
                    f"non-monotonic timestamp {sample.ts_ms}", lineno
                )
            prev_sample_ts = sample.ts_ms
            samples.append(sample)
        elif kind == "tc":
            try:
                tool = ToolType(rec["tool"])
            except (KeyError, ValueError) as exc:
                raise TraceParseError(f"bad tool type: {exc}", lineno) from exc
            cat = rec.get("cat")
            try:
                category = BashCategory(cat) if cat is not None else None
            except ValueError as exc:
                raise TraceParseError(f"bad bash category {cat!r}", lineno) from exc
            try:
                event = ToolCallEvent(
                    tool_type=tool,
                    start_ms=int(rec["start_ms"]),
                    end_ms=int(rec["end_ms"]),
                    command=rec.get("cmd"),
                    category=category,
                )
            except KeyError as exc:
                raise TraceParseError(f"tool call missing key {exc}", lineno) from exc
            except TraceError as exc:
                raise TraceParseError(str(exc), lineno) from exc
            if prev_tool_end is not None and event.start_ms < prev_tool_end:
                raise TraceParseError("overlapping tool calls", lineno)
            prev_tool_end = event.end_ms
            tool_calls.append(event)
        else:
            raise TraceParseError(f"unknown record type {kind!r}", lineno)

    if meta is None:
        raise TraceParseError("missing meta record (empty input)", 1)
    try:
        return TaskTrace(
            task_id=meta["task_id"],
            init_end_ms=meta["init_end_ms"],
            total_ms=meta["total_ms"],
            samples=tuple(samples),
            tool_calls=tuple(tool_calls),
        )
    except TraceError as exc:
        raise TraceParseError(str(exc)) from exc


def serialize_trace(trace: TaskTrace) -> bytes:
    """Inverse of :func:`parse_trace`; stable byte output for equal traces."""
    out: list[str] = []
    out.append(
        json.dumps(
            {
                "t": "meta",
                "task_id": trace.task_id,
                "init_end_ms": trace.init_end_ms,
                "total_ms": trace.total_ms,
            },
            separators=(",", ":"),
        )
    )
    for s in trace.samples:
        out.append(
            json.dumps(
                {"t": "s", "ms": s.ts_ms, "mem": s.mem_bytes, "cpu": s.cpu_pct},
                separators=(",", ":"),
            )
        )
    for tc in trace.tool_calls:
        rec: dict = {
            "t": "tc",
            "tool": tc.tool_type.value,
            "start_ms": tc.start_ms,
            "end_ms": tc.end_ms,
        }
        if tc.command is not None:
            rec["cmd"] = tc.command
        if tc.category is not None:
            rec["cat"] = tc.category.value
        out.append(json.dumps(rec, separators=(",", ":")))
    return ("\n".join(out) + "\n").encode("utf-8")


def load_trace(path: str | Path) -> TaskTrace:
    return parse_trace(Path(path).read_bytes())


def save_trace(trace: TaskTrace, path: str | Path) -> None:
    Path(path).write_bytes(serialize_trace(trace))


# --- synthesis --------------------------------------------------------------

DEFAULT_BURST_PEAK_MB: Mapping[BashCategory, float] = {
    BashCategory.TEST: 518.0,
    BashCategory.PACKAGE_INSTALL: 233.0,
    BashCategory.FILE_EXPLORATION: 4.5,
    BashCategory.GIT: 13.5,
    BashCategory.PYTHON_SNIPPET: 50.0,
    BashCategory.OTHER: 20.0,
}

_CATEGORY_COMMANDS: Mapping[BashCategory, str] = {
    BashCategory.TEST: "pytest tests/ -x",
    BashCategory.PACKAGE_INSTALL: "pip install -r requirements.txt",
    BashCategory.PYTHON_SNIPPET: "python snippet.py",
    BashCategory.FILE_EXPLORATION: "ls -la",
    BashCategory.GIT: "git status",
    BashCategory.OTHER: "true",
}

SAMPLE_INTERVAL_MS = 1000
_LEAD_IN_MS = 5000
_GAP_MS = 3000
_BASE_CPU_PCT = 5.0
_TEST_CPU_SPIKE_PCT = 3.2


@dataclass(frozen=True)
class SynthParams:
    """Parameters for the two-layer synthetic workload: a stable framework
    baseline plus short tool-call bursts, with optional retry groups that
    leak memory between repetitions."""

    duration_s: float
    baseline_mb: float = 185.0
    tool_schedule: tuple[tuple[BashCategory, int], ...] = ()
    burst_peak_mb: Mapping[BashCategory, float] = field(
        default_factory=lambda: dict(DEFAULT_BURST_PEAK_MB)
    )
    burst_duration_s: tuple[float, float] = (1.0, 2.0)
    retry_groups: tuple[tuple[str, int, float], ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise SynthesisError("duration_s must be > 0")
        if self.baseline_mb < 0:
            raise SynthesisError("baseline_mb must be >= 0")
        lo, hi = self.burst_duration_s
        if lo <= 0 or hi < lo:
            raise SynthesisError(f"bad burst_duration_s range ({lo}, {hi})")
        for cat, count in self.tool_schedule:
            if count < 0:
                raise SynthesisError(f"negative count for {cat}")
        for cmd, reps, retained in self.retry_groups:
            if reps < 1:
                raise SynthesisError(f"retry group {cmd!r} needs >= 1 repetition")
            if retained < 0:
                raise SynthesisError("retained_mb_per_retry must be >= 0")

    @property
    def final_baseline_mb(self) -> float:
        """Baseline after all retry-group retention has accumulated."""
        return self.baseline_mb + sum(r * ret for _, r, ret in self.retry_groups)


@dataclass(frozen=True)
class _Window:
    start_ms: int
    end_ms: int
    category: BashCategory
    command: str
    pre_mb: float
    post_mb: float
    apex_mb: float

    @property
    def mid_ms(self) -> float:
        return (self.start_ms + self.end_ms) / 2


def _mb_at(windows: list[_Window], baseline_mb: float, t_ms: float) -> float:
    for w in windows:
        if w.start_ms <= t_ms <= w.end_ms:
            mid = w.mid_ms
            if t_ms <= mid:
                frac = (t_ms - w.start_ms) / (mid - w.start_ms)
                return w.pre_mb + frac * (w.apex_mb - w.pre_mb)
            frac = (t_ms - mid) / (w.end_ms - mid)
            return w.apex_mb + frac * (w.post_mb - w.apex_mb)
        if t_ms < w.start_ms:
            return w.pre_mb
    return windows[-1].post_mb if windows else baseline_mb


def synthesize_trace(params: SynthParams) -> TaskTrace:
    """Build a trace realizing the two-layer model.

    Bursts are symmetric triangles peaking at the window midpoint; a window's
    start sits on the running baseline, and retry-group windows leave the
    baseline higher by the configured retention. Equal params (including the
    seed) yield byte-identical traces.
    """
    rng = random.Random(params.seed)
    total_ms = int(round(params.duration_s * 1000))
    lo_s, hi_s = params.burst_duration_s

    specs: list[tuple[BashCategory, str, float]] = []
    for cat, count in params.tool_schedule:
        peak = float(params.burst_peak_mb.get(cat, DEFAULT_BURST_PEAK_MB[cat]))
        for _ in range(count):
            specs.append((cat, _CATEGORY_COMMANDS[cat], peak))
    retry_specs: list[tuple[str, float]] = []
    test_peak = float(
        params.burst_peak_mb.get(BashCategory.TEST, DEFAULT_BURST_PEAK_MB[BashCategory.TEST])
    )
    for cmd, reps, retained in params.retry_groups:
        for _ in range(reps):
            retry_specs.append((cmd, retained))

    def draw_duration_ms() -> int:
        # even ms so the apex falls on an integer instant (and on a sample)
        return max(2, int(round(rng.uniform(lo_s, hi_s) * 500)) * 2)

    windows: list[_Window] = []
    cursor = _LEAD_IN_MS
    baseline = params.baseline_mb
    for cat, cmd, peak in specs:
        dur_ms = draw_duration_ms()
        win = _Window(cursor, cursor + dur_ms, cat, cmd,
                      pre_mb=baseline, post_mb=baseline,
                      apex_mb=max(peak, baseline))
        windows.append(win)
        cursor = win.end_ms + _GAP_MS
    for cmd, retained in retry_specs:
        dur_ms = draw_duration_ms()
        post = baseline + retained
        win = _Window(cursor, cursor + dur_ms, BashCategory.TEST, cmd,
                      pre_mb=baseline, post_mb=post,
                      apex_mb=max(test_peak, baseline, post))
        windows.append(win)
        baseline = post
        cursor = win.end_ms + _GAP_MS

    if windows and windows[-1].end_ms + SAMPLE_INTERVAL_MS > total_ms:
        raise SynthesisError(
            f"schedule does not fit duration: last window ends at "
            f"{windows[-1].end_ms} ms of {total_ms} ms"
        )

    times = set(range(0, total_ms + 1, SAMPLE_INTERVAL_MS))
    times.add(total_ms)
    for w in windows:
        times.add(w.start_ms)
        times.add(int(round(w.mid_ms)))
        times.add(w.end_ms)

    samples = []
    for t in sorted(times):
        mb = _mb_at(windows, params.baseline_mb, float(t))
        cpu = _BASE_CPU_PCT
        for w in windows:
            if w.category is BashCategory.TEST and w.start_ms <= t <= w.end_ms:
                cpu = _BASE_CPU_PCT + _TEST_CPU_SPIKE_PCT
                break
        samples.append(Sample(t, int(round(mb * MIB)), cpu))

    tool_calls = tuple(
        ToolCallEvent(
            tool_type=ToolType.BASH,
            start_ms=w.start_ms,
            end_ms=w.end_ms,
            command=w.command,
            category=w.category,
        )
        for w in windows
    )
    return TaskTrace(
        task_id=f"synthetic-{params.seed}",
        init_end_ms=0,
        total_ms=total_ms,
        samples=tuple(samples),
        tool_calls=tool_calls,
    )
