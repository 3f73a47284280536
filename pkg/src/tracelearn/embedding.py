"""Bag-of-nodes embedding: two dimensions per executable name."""

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import NamedTuple

from .errors import EmptyCorpusError
from .graph import SystemGraph


class Metric(StrEnum):
    COUNT = "COUNT"
    DEGREE = "DEGREE"


class FeatureId(NamedTuple):
    exe: str
    metric: Metric

    def __str__(self) -> str:
        return f"{self.exe}/{self.metric}"


def _ordered(exes: Iterable[str]) -> tuple[FeatureId, ...]:
    return tuple(
        FeatureId(exe, metric)
        for exe in sorted(set(exes))
        for metric in (Metric.COUNT, Metric.DEGREE)
    )


@dataclass(frozen=True)
class FeatureRegistry:
    """Ordered feature list: every exe in lexicographic order, COUNT before DEGREE."""

    features: tuple[FeatureId, ...]
    _index: dict[FeatureId, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.features) != _ordered(f.exe for f in self.features):
            raise ValueError(
                "registry must list each exe once per metric, "
                "exes in lexicographic order, COUNT before DEGREE"
            )
        index = {feature: i for i, feature in enumerate(self.features)}
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_exes(cls, exes: Iterable[str]) -> "FeatureRegistry":
        return cls(_ordered(exes))

    @property
    def exes(self) -> tuple[str, ...]:
        return tuple(feature.exe for feature in self.features[::2])

    def index(self, feature: FeatureId) -> int:
        return self._index[feature]

    def __contains__(self, feature: object) -> bool:
        return feature in self._index

    def __iter__(self):
        return iter(self.features)

    def __len__(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class EmbeddingVector:
    """Feature values of one graph, aligned with a registry.

    ``unknown_exes`` lists node types present in the graph but absent from
    the registry; their nodes contribute to no dimension.
    """

    registry: FeatureRegistry
    values: tuple[int, ...]
    unknown_exes: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if len(self.values) != len(self.registry):
            raise ValueError(
                f"{len(self.values)} values for a registry of {len(self.registry)} features"
            )

    def __getitem__(self, feature: FeatureId) -> int:
        return self.values[self.registry.index(feature)]

    def restrict(self, features: Iterable[FeatureId]) -> dict[FeatureId, int]:
        """Values of a feature subset, keyed by feature."""
        return {feature: self[feature] for feature in features}


def build_registry(graphs: Sequence[SystemGraph]) -> FeatureRegistry:
    """Registry covering every node type seen across a corpus of graphs."""
    exes = {exe for graph in graphs for _, exe in graph.graph.nodes(data="exe")}
    if not exes:
        raise EmptyCorpusError("no node types in corpus; cannot build a feature registry")
    return FeatureRegistry.from_exes(exes)


def embed(graph: SystemGraph, registry: FeatureRegistry) -> EmbeddingVector:
    """Count the nodes of each type and sum their degrees."""
    counts: Counter[str] = Counter()
    degrees: Counter[str] = Counter()
    for key, exe in graph.graph.nodes(data="exe"):
        counts[exe] += 1
        degrees[exe] += graph.graph.degree(key)

    values = []
    for feature in registry.features:
        source = counts if feature.metric == Metric.COUNT else degrees
        values.append(source[feature.exe])
    unknown = frozenset(exe for exe in counts if FeatureId(exe, Metric.COUNT) not in registry)
    return EmbeddingVector(registry=registry, values=tuple(values), unknown_exes=unknown)
