"""Per-feature linear models against workload and the normal-behaviour model."""

import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .embedding import EmbeddingVector, FeatureId, FeatureRegistry, Metric, build_registry, embed
from .errors import DegenerateWorkloadError, EmptyCorpusError, ModelFormatError
from .graph import EdgeKind, SystemGraph, build_graph, node_signatures
from .traces import Label, RunTrace

logger = logging.getLogger(__name__)

PERFECT_CONSTANT = "PERFECT_CONSTANT"
MODEL_FORMAT = "tracelearn-model"
MODEL_VERSION = 1

DEFAULT_R2_THRESHOLD = 0.95
DEFAULT_TOLERANCE_FACTOR = 1.0
DEFAULT_ABSOLUTE_SLACK = 0.5

# exe -> distinct sets of edge kinds incident to its nodes, canonically sorted
ObservationProfile = dict[str, tuple[tuple[EdgeKind, ...], ...]]


class ProcessClass(StrEnum):
    BACKGROUND = "BACKGROUND"
    WORKLOAD = "WORKLOAD"
    UNSTABLE = "UNSTABLE"


class LinearFit(BaseModel):
    """Least-squares line of one feature against workload."""

    model_config = ConfigDict(frozen=True)

    slope: float
    intercept: float
    r2: float | Literal["PERFECT_CONSTANT"]
    max_abs_residual: float = Field(ge=0)

    @property
    def is_perfect_constant(self) -> bool:
        return self.r2 == PERFECT_CONSTANT

    def predict(self, workload: float) -> float:
        return self.slope * workload + self.intercept

    def band(self, tolerance_factor: float, absolute_slack: float) -> float:
        """Allowed deviation around the prediction."""
        if self.is_perfect_constant:
            return absolute_slack
        return tolerance_factor * self.max_abs_residual + absolute_slack

    def fits_well(self, r2_threshold: float) -> bool:
        return self.is_perfect_constant or self.r2 >= r2_threshold


def fit_feature(xs: Sequence[float], ys: Sequence[float]) -> LinearFit:
    """Ordinary least squares of ys on xs with R² as goodness of fit.

    A feature with zero variance is reported as PERFECT_CONSTANT.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be one-dimensional and of equal length")
    if x.size < 2:
        raise DegenerateWorkloadError(f"need at least 2 points, got {x.size}")

    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise DegenerateWorkloadError("all workloads are equal; the slope is undefined")
    if np.all(y == y[0]):
        # y.mean() of a repeated non-dyadic value need not equal it
        return LinearFit(
            slope=0.0, intercept=float(y[0]), r2=PERFECT_CONSTANT, max_abs_residual=0.0
        )
    dy = y - y.mean()
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    residuals = y - (slope * x + intercept)
    max_abs_residual = float(np.max(np.abs(residuals)))
    ss_res = float(residuals @ residuals)
    ss_tot = float(dy @ dy)
    r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot)) if ss_tot > 0 else 0.0
    return LinearFit(
        slope=slope, intercept=intercept, r2=r2, max_abs_residual=max_abs_residual
    )


def observation_profile(
    graphs: Iterable[SystemGraph], exes: Iterable[str] | None = None
) -> ObservationProfile:
    """Merge the per-exe node signatures of several graphs."""
    merged: dict[str, set[frozenset[EdgeKind]]] = {}
    for graph in graphs:
        for exe, signatures in node_signatures(graph).items():
            merged.setdefault(exe, set()).update(signatures)
    wanted = set(merged) if exes is None else set(exes)
    return {
        exe: tuple(sorted(tuple(sorted(sig)) for sig in merged.get(exe, ())))
        for exe in sorted(wanted)
    }


@dataclass(frozen=True)
class TrainingCorpus:
    """Workload/embedding pairs of failure-free runs."""

    registry: FeatureRegistry
    workloads: tuple[int, ...]
    embeddings: tuple[EmbeddingVector, ...]
    profile: ObservationProfile = field(default_factory=dict)
    run_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.workloads) != len(self.embeddings):
            raise ValueError("one workload per embedding is required")
        if len(self.workloads) < 2:
            raise EmptyCorpusError(
                f"training corpus too small: {len(self.workloads)} run(s), need at least 2"
            )
        if len(set(self.workloads)) < 2:
            raise DegenerateWorkloadError(
                f"training needs at least 2 distinct workloads, got {sorted(set(self.workloads))}"
            )

    @classmethod
    def from_graphs(cls, runs: Sequence[tuple[int, SystemGraph]]) -> "TrainingCorpus":
        """Corpus from (workload, graph) pairs, all assumed failure-free."""
        if not runs:
            raise EmptyCorpusError("no failure-free runs to train on")
        graphs = [graph for _, graph in runs]
        registry = build_registry(graphs)
        return cls(
            registry=registry,
            workloads=tuple(workload for workload, _ in runs),
            embeddings=tuple(embed(graph, registry) for graph in graphs),
            profile=observation_profile(graphs, registry.exes),
            run_ids=tuple(graph.run_id for graph in graphs),
        )

    @classmethod
    def from_traces(cls, traces: Iterable[RunTrace]) -> "TrainingCorpus":
        """Corpus from run traces; anything not labelled NORMAL is left out."""
        traces = list(traces)
        normal = [trace for trace in traces if trace.label is Label.NORMAL]
        excluded = len(traces) - len(normal)
        if excluded:
            logger.info("excluded %d non-NORMAL run(s) from training", excluded)
        return cls.from_graphs([(trace.workload, build_graph(trace)) for trace in normal])


@dataclass(frozen=True)
class BehaviorModel:
    """Ensemble of per-feature linear fits and the features selected for monitoring."""

    registry: FeatureRegistry
    fits: dict[FeatureId, LinearFit]
    selected: tuple[FeatureId, ...]
    r2_threshold: float = DEFAULT_R2_THRESHOLD
    tolerance_factor: float = DEFAULT_TOLERANCE_FACTOR
    absolute_slack: float = DEFAULT_ABSOLUTE_SLACK
    profile: ObservationProfile = field(default_factory=dict)

    def __post_init__(self) -> None:
        for feature in self.selected:
            if feature not in self.registry:
                raise ValueError(f"selected feature {feature} is not in the registry")
            if not self.fits[feature].fits_well(self.r2_threshold):
                raise ValueError(f"selected feature {feature} is below the R² threshold")

    def predict(self, feature: FeatureId, workload: float) -> float:
        return self.fits[feature].predict(workload)

    def band(self, feature: FeatureId) -> float:
        return self.fits[feature].band(self.tolerance_factor, self.absolute_slack)

    def process_classes(self) -> dict[str, ProcessClass]:
        """Role of every trained executable, read off its selected fits.

        A selected feature that moves with workload marks a process that handles
        requests. Selected features that are all flat mark a background process,
        whether system or application. An exe with no selected feature changes
        independently of the workload, like periodic maintenance jobs.
        """
        selected = set(self.selected)
        classes = {}
        for exe in self.registry.exes:
            features = [FeatureId(exe, metric) for metric in Metric]
            kept = [self.fits[feature] for feature in features if feature in selected]
            if not kept:
                classes[exe] = ProcessClass.UNSTABLE
            elif all(fit.is_perfect_constant or fit.slope == 0 for fit in kept):
                classes[exe] = ProcessClass.BACKGROUND
            else:
                classes[exe] = ProcessClass.WORKLOAD
        return classes


def train(
    corpus: TrainingCorpus,
    r2_threshold: float = DEFAULT_R2_THRESHOLD,
    tolerance_factor: float = DEFAULT_TOLERANCE_FACTOR,
    absolute_slack: float = DEFAULT_ABSOLUTE_SLACK,
) -> BehaviorModel:
    """Fit every registry feature and keep those that are linear in workload."""
    xs = np.asarray(corpus.workloads, dtype=float)
    matrix = np.asarray([vector.values for vector in corpus.embeddings], dtype=float)
    fits = {
        feature: fit_feature(xs, matrix[:, i])
        for i, feature in enumerate(corpus.registry.features)
    }
    selected = tuple(
        feature for feature in corpus.registry.features if fits[feature].fits_well(r2_threshold)
    )
    logger.info(
        "selected %d of %d features at R² >= %s",
        len(selected),
        len(corpus.registry),
        r2_threshold,
    )
    return BehaviorModel(
        registry=corpus.registry,
        fits=fits,
        selected=selected,
        r2_threshold=r2_threshold,
        tolerance_factor=tolerance_factor,
        absolute_slack=absolute_slack,
        profile=corpus.profile,
    )


class _FitRecord(LinearFit):
    exe: str
    metric: Metric


class _ModelFile(BaseModel):
    model_config = ConfigDict(extra="allow")

    format: Literal["tracelearn-model"]
    version: int
    r2_threshold: float
    tolerance_factor: float
    absolute_slack: float
    registry: list[tuple[str, Metric]]
    fits: list[_FitRecord]
    selected: list[tuple[str, Metric]]
    profile: dict[str, list[list[EdgeKind]]]
    # derived from fits and selection; recomputed on load
    classes: dict[str, ProcessClass] | None = None


def model_to_dict(model: BehaviorModel) -> dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "r2_threshold": model.r2_threshold,
        "tolerance_factor": model.tolerance_factor,
        "absolute_slack": model.absolute_slack,
        "registry": [[f.exe, str(f.metric)] for f in model.registry.features],
        "fits": [
            {"exe": f.exe, "metric": str(f.metric), **model.fits[f].model_dump()}
            for f in model.registry.features
        ],
        "selected": [[f.exe, str(f.metric)] for f in model.selected],
        "classes": {exe: str(role) for exe, role in model.process_classes().items()},
        "profile": {
            exe: [[str(kind) for kind in sig] for sig in sigs]
            for exe, sigs in model.profile.items()
        },
    }


def save_model(
    model: BehaviorModel, path: str | Path, sections: Mapping[str, Any] | None = None
) -> None:
    """Write a model file; ``sections`` adds extra top-level entries (plan, config)."""
    document = model_to_dict(model)
    for name, value in (sections or {}).items():
        if name in document:
            raise ValueError(f"section {name!r} would overwrite a model field")
        document[name] = value
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, ensure_ascii=False)
        f.write("\n")


def load_document(path: str | Path) -> dict[str, Any]:
    """Parse a JSON artifact that must hold a top-level object."""
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a JSON document ({exc})") from None
    if not isinstance(document, dict):
        raise ModelFormatError(f"{path}: expected a JSON object")
    return document


def check_format(
    document: Mapping[str, Any], expected_format: str, version: int, path: str | Path
) -> None:
    """Reject documents with another format tag or an unsupported version."""
    if document.get("format") != expected_format:
        raise ModelFormatError(
            f"{path}: expected format {expected_format!r}, found {document.get('format')!r}"
        )
    if document.get("version") != version:
        raise ModelFormatError(
            f"{path}: unsupported {expected_format} version {document.get('version')!r}"
        )


def model_from_dict(document: Mapping[str, Any]) -> BehaviorModel:
    try:
        parsed = _ModelFile.model_validate(document)
        registry = FeatureRegistry(tuple(FeatureId(exe, metric) for exe, metric in parsed.registry))
        fits = {
            FeatureId(rec.exe, rec.metric): LinearFit(
                slope=rec.slope,
                intercept=rec.intercept,
                r2=rec.r2,
                max_abs_residual=rec.max_abs_residual,
            )
            for rec in parsed.fits
        }
        if set(fits) != set(registry.features):
            raise ValueError("fits do not cover the registry")
        return BehaviorModel(
            registry=registry,
            fits=fits,
            selected=tuple(FeatureId(exe, metric) for exe, metric in parsed.selected),
            r2_threshold=parsed.r2_threshold,
            tolerance_factor=parsed.tolerance_factor,
            absolute_slack=parsed.absolute_slack,
            profile={
                exe: tuple(tuple(sig) for sig in sigs) for exe, sigs in parsed.profile.items()
            },
        )
    except (ValidationError, ValueError) as exc:
        raise ModelFormatError(f"invalid model file: {exc}") from None


def load_model(path: str | Path) -> BehaviorModel:
    """Read a model file written by :func:`save_model`."""
    document = load_document(path)
    check_format(document, MODEL_FORMAT, MODEL_VERSION, path)
    return model_from_dict(document)
