"""Cross-validated Recall/Selectivity of the full detection pipeline."""

import hashlib
import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .config import DetectorConfig
from .errors import DatasetError, TraceLearnError
from .graph import SystemGraph, build_graph
from .monitor import Decision, MonitorMode, run_monitor
from .plan import MonitoringPlan, derive_plan
from .synth import Dataset, load_dataset
from .traces import Label, RunTrace
from .training import BehaviorModel, TrainingCorpus, train

logger = logging.getLogger(__name__)

NUM_FOLDS = 10
REPORT_FORMAT = "tracelearn-report"
REPORT_VERSION = 1


def fold_of(run_id: str) -> int:
    """Stable fold assignment of a run, independent of dataset order."""
    return int(hashlib.sha256(run_id.encode("utf-8")).hexdigest(), 16) % NUM_FOLDS


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple[str, ...]
    test: tuple[str, ...]


def fold_partition(traces: Iterable[RunTrace]) -> list[FoldSplit]:
    """Train/test run ids per fold.

    NORMAL runs are tested in the one fold their id hashes to and trained on
    in every other fold. FAULT runs are tested in every fold and never
    trained on. Runs of any other label take no part.
    """
    traces = list(traces)
    normal = sorted(t.run_id for t in traces if t.label is Label.NORMAL)
    fault = sorted(t.run_id for t in traces if t.label is Label.FAULT)
    splits = []
    for fold in range(NUM_FOLDS):
        held_out = [run_id for run_id in normal if fold_of(run_id) == fold]
        splits.append(
            FoldSplit(
                fold=fold,
                train=tuple(run_id for run_id in normal if fold_of(run_id) != fold),
                test=tuple(held_out + fault),
            )
        )
    return splits


def _rate(hits: int, misses: int) -> float | None:
    total = hits + misses
    return hits / total if total else None


def _mean(values: Iterable[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


@dataclass(frozen=True)
class FoldResult:
    fold: int
    train_runs: int
    selected_features: int
    filters: int
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def recall(self) -> float | None:
        return _rate(self.tp, self.fn)

    @property
    def selectivity(self) -> float | None:
        return _rate(self.tn, self.fp)

    @property
    def test_runs(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def to_dict(self) -> dict[str, Any]:
        return {
            "fold": self.fold,
            "train_runs": self.train_runs,
            "test_runs": self.test_runs,
            "selected_features": self.selected_features,
            "filters": self.filters,
            "tp": self.tp,
            "fn": self.fn,
            "tn": self.tn,
            "fp": self.fp,
            "recall": self.recall,
            "selectivity": self.selectivity,
        }


@dataclass(frozen=True)
class EvalReport:
    """Per-fold confusion counts and rates, their means and the configuration used."""

    folds: tuple[FoldResult, ...]
    config: DetectorConfig
    normal_runs: int
    fault_runs: int
    dataset_seed: int | None = None

    @property
    def mean_recall(self) -> float | None:
        return _mean(f.recall for f in self.folds)

    @property
    def mean_selectivity(self) -> float | None:
        return _mean(f.selectivity for f in self.folds)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config": self.config.model_dump(mode="json", exclude={"seed"}),
            "dataset": {
                "normal_runs": self.normal_runs,
                "fault_runs": self.fault_runs,
                "seed": self.dataset_seed,
            },
            "folds": [fold.to_dict() for fold in self.folds],
            "mean_recall": self.mean_recall,
            "mean_selectivity": self.mean_selectivity,
        }


def classify_run(
    trace: RunTrace,
    model: BehaviorModel,
    plan: MonitoringPlan,
    mode: MonitorMode = MonitorMode.END_OF_RUN,
    *,
    period: float = 60.0,
    endpoint: str | None = None,
    flag_unknown: bool = True,
) -> Decision:
    """ANOMALOUS iff any verdict the monitor emits for the run is ANOMALOUS."""
    result = run_monitor(
        trace.events,
        model,
        plan,
        mode=mode,
        period=period,
        endpoint=endpoint,
        flag_unknown=flag_unknown,
    )
    if result.error is not None:
        raise TraceLearnError(f"{trace.run_id}: {result.error}")
    return Decision.ANOMALOUS if result.anomalous else Decision.NORMAL


def cross_validate(
    dataset: Dataset | str | Path, config: DetectorConfig | None = None
) -> EvalReport:
    """10-fold cross-validation: train on nine tenths of the NORMAL runs, test on
    the held-out tenth plus every FAULT run, and tally the confusion counts.
    """
    config = config or DetectorConfig()
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    traces = {trace.run_id: trace for trace in dataset.traces}
    if len(traces) != len(dataset.traces):
        raise DatasetError(f"{dataset.root}: duplicate run ids")
    normal = dataset.normal
    if len(normal) < NUM_FOLDS:
        raise DatasetError(
            f"{len(normal)} NORMAL runs; cross-validation needs at least {NUM_FOLDS}"
        )
    graphs: dict[str, SystemGraph] = {trace.run_id: build_graph(trace) for trace in normal}

    folds = []
    for split in fold_partition(dataset.traces):
        corpus = TrainingCorpus.from_graphs(
            [(traces[run_id].workload, graphs[run_id]) for run_id in split.train]
        )
        model = train(
            corpus,
            r2_threshold=config.r2_threshold,
            tolerance_factor=config.tolerance_factor,
            absolute_slack=config.absolute_slack,
        )
        plan = derive_plan(model)
        counts = {"tp": 0, "fn": 0, "tn": 0, "fp": 0}
        for run_id in split.test:
            trace = traces[run_id]
            decision = classify_run(
                trace,
                model,
                plan,
                config.mode,
                period=config.period,
                endpoint=config.endpoint,
                flag_unknown=config.flag_unknown,
            )
            anomalous = decision is Decision.ANOMALOUS
            if trace.label is Label.FAULT:
                counts["tp" if anomalous else "fn"] += 1
            else:
                counts["fp" if anomalous else "tn"] += 1
        result = FoldResult(
            fold=split.fold,
            train_runs=len(split.train),
            selected_features=len(model.selected),
            filters=len(plan.filters),
            **counts,
        )
        logger.info(
            "fold %d: recall=%s selectivity=%s", result.fold, result.recall, result.selectivity
        )
        folds.append(result)

    manifest = dataset.manifest
    return EvalReport(
        folds=tuple(folds),
        config=config,
        normal_runs=len(normal),
        fault_runs=len(dataset.fault),
        dataset_seed=manifest.generator.seed if manifest and manifest.generator else None,
    )
