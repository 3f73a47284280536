"""Backtracking selected features to the event filters needed to compute them online."""

import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .embedding import FeatureId, Metric
from .errors import EmptySelectionError, ModelFormatError
from .graph import EdgeKind
from .traces import Event, EventKind, RunTrace
from .training import MODEL_FORMAT, MODEL_VERSION, BehaviorModel, check_format, load_document

logger = logging.getLogger(__name__)

PLAN_FORMAT = "tracelearn-plan"
PLAN_VERSION = 1

# tie-break order when several kinds observe the same nodes
KIND_PREFERENCE = (EdgeKind.SPAWN, EdgeKind.IPC, EdgeKind.NET)


@dataclass(frozen=True)
class ProbeFilter:
    """Captures events of one kind, optionally only those touching given executables."""

    kind: EventKind
    exe_set: frozenset[str] = frozenset()

    def matches(self, event: Event) -> bool:
        if event.kind is not self.kind:
            return False
        if not self.exe_set:
            return True
        return (
            event.exe in self.exe_set
            or event.peer_exe in self.exe_set
            or event.parent_exe in self.exe_set
        )


@dataclass(frozen=True)
class MonitoringPlan:
    filters: tuple[ProbeFilter, ...]
    selected: tuple[FeatureId, ...]

    def __post_init__(self) -> None:
        if not any(f.kind is EventKind.REQUEST for f in self.filters):
            raise ValueError("a monitoring plan must capture REQUEST events")

    def matches(self, event: Event) -> bool:
        return any(f.matches(event) for f in self.filters)

    def without(self, kind: EventKind) -> "MonitoringPlan":
        """Copy of the plan with the filters of one feature kind removed (REQUEST cannot be)."""
        return MonitoringPlan(
            filters=tuple(f for f in self.filters if f.kind is not kind), selected=self.selected
        )

    def describe(self) -> list[str]:
        lines = []
        for f in self.filters:
            exes = ",".join(sorted(f.exe_set)) if f.exe_set else "*"
            lines.append(f"{f.kind:<8} {exes}")
        return lines

    def to_dict(self) -> dict[str, Any]:
        return {
            "filters": [
                {"kind": str(f.kind), "exe_set": sorted(f.exe_set)} for f in self.filters
            ],
            "selected": [[f.exe, str(f.metric)] for f in self.selected],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MonitoringPlan":
        try:
            return cls(
                filters=tuple(
                    ProbeFilter(EventKind(item["kind"]), frozenset(item["exe_set"]))
                    for item in data["filters"]
                ),
                selected=tuple(FeatureId(exe, Metric(metric)) for exe, metric in data["selected"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"invalid monitoring plan: {exc}") from None


def _covering_kinds(signatures: Sequence[Sequence[EdgeKind]]) -> set[EdgeKind]:
    """Smallest set of kinds such that every node signature contains one of them."""
    uncovered = [frozenset(sig) for sig in signatures if sig]
    chosen: set[EdgeKind] = set()
    while uncovered:
        best = max(
            KIND_PREFERENCE,
            key=lambda kind: (
                sum(kind in sig for sig in uncovered),
                -KIND_PREFERENCE.index(kind),
            ),
        )
        chosen.add(best)
        uncovered = [sig for sig in uncovered if best not in sig]
    # drop kinds made redundant by later picks
    all_sigs = [frozenset(sig) for sig in signatures if sig]
    for kind in sorted(chosen, key=KIND_PREFERENCE.index, reverse=True):
        rest = chosen - {kind}
        if all(sig & rest for sig in all_sigs):
            chosen = rest
    return chosen


def _required_kinds(
    feature: FeatureId, profile: Mapping[str, Sequence[Sequence[EdgeKind]]]
) -> set[EdgeKind]:
    signatures = profile.get(feature.exe)
    if not signatures:
        # nothing learned about how this exe is observed: watch every interaction
        return set(KIND_PREFERENCE)
    if feature.metric == Metric.DEGREE:
        return {kind for sig in signatures for kind in sig}
    return _covering_kinds(signatures)


def derive_plan(model: BehaviorModel) -> MonitoringPlan:
    """Map each selected feature to the event kinds and executables it is computed from.

    COUNT needs one observation of every node of its exe; DEGREE needs every
    interaction kind its exe takes part in. A kind is captured only if some
    feature needs it, but once captured every DEGREE exe is subscribed to it
    (IPC and NET only). REQUEST events are always captured.
    """
    if not model.selected:
        raise EmptySelectionError("the model selects no feature; nothing to monitor")

    needed: dict[EdgeKind, set[str]] = {}
    degree_exes: set[str] = set()
    for feature in model.selected:
        if feature.metric == Metric.DEGREE:
            degree_exes.add(feature.exe)
        for kind in _required_kinds(feature, model.profile):
            needed.setdefault(kind, set()).add(feature.exe)
    for kind in (EdgeKind.IPC, EdgeKind.NET):
        if kind in needed:
            needed[kind] |= degree_exes

    filters = [
        ProbeFilter(EventKind(kind), frozenset(needed[kind]))
        for kind in KIND_PREFERENCE
        if kind in needed
    ]
    filters.append(ProbeFilter(EventKind.REQUEST))
    plan = MonitoringPlan(filters=tuple(filters), selected=model.selected)
    logger.info("derived plan with %d filters for %d features", len(filters), len(model.selected))
    return plan


def apply_filter(plan: MonitoringPlan, trace: RunTrace) -> RunTrace:
    """Keep only the events some filter of the plan captures."""
    return trace.with_events(event for event in trace.events if plan.matches(event))


def filter_events(plan: MonitoringPlan, events: Iterable[Event]) -> Iterable[Event]:
    return (event for event in events if plan.matches(event))


def save_plan(plan: MonitoringPlan, path: str | Path) -> None:
    document = {"format": PLAN_FORMAT, "version": PLAN_VERSION, **plan.to_dict()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")


def load_plan(path: str | Path) -> MonitoringPlan:
    """Read a standalone plan file, or the plan embedded in a model file."""
    document = load_document(path)
    if document.get("format") == MODEL_FORMAT:
        check_format(document, MODEL_FORMAT, MODEL_VERSION, path)
        if not document.get("plan"):
            raise ModelFormatError(f"{path}: model file carries no monitoring plan")
        return MonitoringPlan.from_dict(document["plan"])
    check_format(document, PLAN_FORMAT, PLAN_VERSION, path)
    return MonitoringPlan.from_dict(document)
