"""Online feature counters and periodic verdicts against a behaviour model."""

import json
import logging
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from decimal import Decimal
from enum import StrEnum
from typing import Any, TextIO

from .embedding import FeatureId, Metric
from .errors import TraceLearnError
from .graph import Edge, NodeKey, edge_of, endpoint_exes
from .plan import MonitoringPlan
from .traces import Event, EventKind
from .training import BehaviorModel

logger = logging.getLogger(__name__)


class MonitorMode(StrEnum):
    END_OF_RUN = "END_OF_RUN"
    PERIODIC = "PERIODIC"


class Decision(StrEnum):
    NORMAL = "NORMAL"
    ANOMALOUS = "ANOMALOUS"


@dataclass(frozen=True)
class Evidence:
    feature: FeatureId
    observed: float
    predicted: float
    band: float


@dataclass(frozen=True)
class Verdict:
    ts: float
    decision: Decision
    evidence: tuple[Evidence, ...] = ()
    unknown_exes: frozenset[str] = frozenset()
    request_count: int = 0

    @property
    def anomalous(self) -> bool:
        return self.decision is Decision.ANOMALOUS

    def to_record(self, run_id: str | None = None) -> dict[str, Any]:
        return {
            "run_id": run_id,
            "ts": self.ts,
            "decision": str(self.decision),
            "requests": self.request_count,
            "evidence": [
                {
                    "exe": item.feature.exe,
                    "metric": str(item.feature.metric),
                    "observed": item.observed,
                    "predicted": item.predicted,
                    "band": item.band,
                }
                for item in self.evidence
            ],
            "unknown_exes": sorted(self.unknown_exes),
        }


@dataclass
class MonitorState:
    """Incrementally maintained graph counters for the selected features.

    Single owner: only one thread may call :meth:`ingest`. Evaluate from
    another thread on a :meth:`snapshot`.
    """

    model: BehaviorModel
    plan: MonitoringPlan | None = None
    endpoint: str | None = None
    flag_unknown: bool = True
    request_count: int = 0
    last_verdict_ts: float = 0.0
    malformed: int = 0
    unknown_exes: set[str] = field(default_factory=set)
    counts: Counter[str] = field(default_factory=Counter)
    degrees: Counter[str] = field(default_factory=Counter)
    _nodes: dict[NodeKey, str] = field(default_factory=dict, repr=False)
    _edges: set[Edge] = field(default_factory=set, repr=False)

    def __post_init__(self) -> None:
        self.selected = self.plan.selected if self.plan is not None else self.model.selected
        self.tracked = {feature.exe for feature in self.selected}
        self.known = set(self.model.registry.exes)

    def ingest(self, event: Event) -> "MonitorState":
        """Fold one event into the counters; returns self."""
        if event.kind is EventKind.REQUEST:
            if self.endpoint is None or event.endpoint == self.endpoint:
                self.request_count += 1
            return self
        sides = endpoint_exes(event)
        if sides is None:
            return self

        (src, src_exe), (dst, dst_exe) = sides
        if (
            self._nodes.get(src, src_exe) != src_exe
            or self._nodes.get(dst, dst_exe) != dst_exe
            or (src == dst and src_exe != dst_exe)
        ):
            self.malformed += 1
            logger.warning("skipping event at ts=%s: process seen under another exe", event.ts)
            return self

        for key, exe in sides:
            if key in self._nodes:
                continue
            self._nodes[key] = exe
            if exe in self.tracked:
                self.counts[exe] += 1
            if exe not in self.known:
                self.unknown_exes.add(exe)

        edge = edge_of(event)
        if edge not in self._edges:
            self._edges.add(edge)
            for exe in (src_exe, dst_exe):
                if exe in self.tracked:
                    self.degrees[exe] += 1
        return self

    def feature_values(self) -> dict[FeatureId, int]:
        return {
            feature: (
                self.counts[feature.exe]
                if feature.metric == Metric.COUNT
                else self.degrees[feature.exe]
            )
            for feature in self.selected
        }

    def evaluate(self, ts: float | None = None) -> Verdict:
        """Check every selected feature against its prediction at the current request count."""
        evidence = []
        for feature, observed in self.feature_values().items():
            predicted = self.model.predict(feature, self.request_count)
            band = self.model.band(feature)
            if abs(observed - predicted) > band:
                evidence.append(Evidence(feature, observed, predicted, band))
        unknown = frozenset(self.unknown_exes)
        anomalous = bool(evidence) or (self.flag_unknown and bool(unknown))
        if ts is not None:
            self.last_verdict_ts = ts
        return Verdict(
            ts=self.last_verdict_ts,
            decision=Decision.ANOMALOUS if anomalous else Decision.NORMAL,
            evidence=tuple(evidence),
            unknown_exes=unknown,
            request_count=self.request_count,
        )

    def snapshot(self) -> "MonitorState":
        """Independent copy sharing only the immutable model and plan."""
        return MonitorState(
            model=self.model,
            plan=self.plan,
            endpoint=self.endpoint,
            flag_unknown=self.flag_unknown,
            request_count=self.request_count,
            last_verdict_ts=self.last_verdict_ts,
            malformed=self.malformed,
            unknown_exes=set(self.unknown_exes),
            counts=Counter(self.counts),
            degrees=Counter(self.degrees),
            _nodes=dict(self._nodes),
            _edges=set(self._edges),
        )


def ingest(state: MonitorState, event: Event) -> MonitorState:
    return state.ingest(event)


def evaluate(state: MonitorState) -> Verdict:
    return state.evaluate()


@dataclass
class MonitorRun:
    verdicts: list[Verdict]
    malformed: int = 0
    error: str | None = None
    state: MonitorState | None = field(default=None, repr=False)

    @property
    def anomalous(self) -> bool:
        return any(verdict.anomalous for verdict in self.verdicts)


def run_monitor(
    events: Iterable[Event],
    model: BehaviorModel,
    plan: MonitoringPlan | None = None,
    *,
    mode: MonitorMode = MonitorMode.END_OF_RUN,
    period: float = 60.0,
    endpoint: str | None = None,
    flag_unknown: bool = True,
) -> MonitorRun:
    """Feed an event stream through the plan's filters and collect verdicts.

    END_OF_RUN yields one verdict when the stream ends. PERIODIC also yields
    one at every period boundary the stream crosses, computed before the
    first event at or past that boundary. A stream that fails part-way still
    gets its final verdict; the failure is reported in ``error``.
    """
    if period <= 0:
        raise ValueError("period must be positive")
    state = MonitorState(model=model, plan=plan, endpoint=endpoint, flag_unknown=flag_unknown)
    verdicts: list[Verdict] = []
    # boundary k is k * period computed in decimal: 3 x 0.1 is 0.3, not 0.30000000000000004
    step = Decimal(repr(float(period)))
    k = 1
    last_ts = 0.0
    error = None
    try:
        for event in events:
            if mode is MonitorMode.PERIODIC:
                while event.ts >= (boundary := float(step * k)):
                    verdicts.append(state.evaluate(ts=boundary))
                    k += 1
            last_ts = max(last_ts, event.ts)
            if plan is None or plan.matches(event):
                state.ingest(event)
    except (OSError, TraceLearnError) as exc:
        error = str(exc)
        logger.error("event stream failed: %s", exc)
    verdicts.append(state.evaluate(ts=last_ts))
    return MonitorRun(verdicts=verdicts, malformed=state.malformed, error=error, state=state)


def verdict_lines(verdicts: Iterable[Verdict], run_id: str | None = None) -> Iterator[str]:
    for verdict in verdicts:
        yield json.dumps(verdict.to_record(run_id), sort_keys=False)


def write_verdicts(verdicts: Iterable[Verdict], stream: TextIO, run_id: str | None = None) -> None:
    """Write verdicts as newline-delimited JSON records."""
    for line in verdict_lines(verdicts, run_id):
        stream.write(line + "\n")
