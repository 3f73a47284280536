"""Synthetic traces with known ground truth, normal and fault-injected."""

import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .embedding import FeatureId, Metric
from .errors import DatasetError, ScenarioError, TraceLearnError
from .graph import NodeKey, edge_of
from .traces import Event, EventKind, Label, RunTrace, parse_trace, write_trace

logger = logging.getLogger(__name__)

RNG_NAME = "PCG64"
MANIFEST_NAME = "manifest.yml"
DATASET_FORMAT = "tracelearn-dataset"
DATASET_VERSION = 1
MIN_NORMAL_RUNS = 10
ROOT_PID = 1
FIRST_PID = 100
EVENT_TICK = 0.01
REQUEST_GAP = 1.0


class FaultMode(StrEnum):
    SUPPRESS_SPAWN = "SUPPRESS_SPAWN"
    EXTRA_SPAWN = "EXTRA_SPAWN"
    DROP_EDGE = "DROP_EDGE"
    ALIEN_PROCESS = "ALIEN_PROCESS"


class ComponentTemplate(BaseModel):
    """An application process type and how its instances scale with requests."""

    exe: str = Field(min_length=1)
    host: str
    parent: str | None = None
    per_request_spawn_count: int = Field(default=0, ge=0)
    per_request_ipc_edges: list[str] = Field(default_factory=list)
    baseline_instances: int = Field(default=0, ge=0)
    port: int | None = Field(default=None, gt=0, lt=65536)

    @model_validator(mode="after")
    def _check_presence(self) -> "ComponentTemplate":
        if self.baseline_instances + self.per_request_spawn_count == 0:
            raise ValueError(f"component {self.exe!r} never has an instance")
        if self.per_request_ipc_edges and not self.per_request_spawn_count:
            raise ValueError(
                f"component {self.exe!r} has per-request edges but no per-request spawns"
            )
        return self


class NoiseTemplate(BaseModel):
    """Background process type whose instance count is drawn per run."""

    exe: str = Field(min_length=1)
    host: str
    low: int = Field(ge=1)
    high: int

    @model_validator(mode="after")
    def _check_range(self) -> "NoiseTemplate":
        if self.high <= self.low:
            raise ValueError(f"noise {self.exe!r}: high must exceed low")
        return self


class FaultSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: FaultMode
    target: str = Field(min_length=1)
    magnitude: int = Field(default=1, ge=1)

    def __str__(self) -> str:
        return f"{self.mode}({self.target}, {self.magnitude})"


class ScenarioSpec(BaseModel):
    """Process topology the generator emulates."""

    hosts: list[str] = Field(min_length=1)
    root_exe: str = "systemd"
    frontend_exe: str
    request_endpoint: str | None = None
    seed: int = 0
    components: list[ComponentTemplate] = Field(min_length=1)
    noise_exes: list[NoiseTemplate] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_topology(self) -> "ScenarioSpec":
        names = [c.exe for c in self.components] + [n.exe for n in self.noise_exes]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"duplicate executables: {', '.join(duplicates)}")
        if self.root_exe in names:
            raise ValueError(f"{self.root_exe!r} is the root executable")
        for item in [*self.components, *self.noise_exes]:
            if item.host not in self.hosts:
                raise ValueError(f"{item.exe!r} runs on unknown host {item.host!r}")

        seen: dict[str, ComponentTemplate] = {}
        for component in self.components:
            if component.parent is not None and component.parent != self.root_exe:
                parent = seen.get(component.parent)
                if parent is None:
                    raise ValueError(
                        f"parent {component.parent!r} of {component.exe!r} must be listed before it"
                    )
                if not parent.baseline_instances or parent.host != component.host:
                    raise ValueError(
                        f"parent {parent.exe!r} of {component.exe!r} needs a baseline "
                        "instance on the same host"
                    )
            seen[component.exe] = component
        for component in self.components:
            for peer in component.per_request_ipc_edges:
                if peer not in seen or not seen[peer].baseline_instances:
                    raise ValueError(
                        f"peer {peer!r} of {component.exe!r} needs a baseline instance"
                    )

        frontend = seen.get(self.frontend_exe)
        if frontend is None or not frontend.baseline_instances:
            raise ValueError(f"frontend {self.frontend_exe!r} needs a baseline instance")
        if self.request_endpoint is None and frontend.port is None:
            raise ValueError("request_endpoint is required when the frontend has no port")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioSpec":
        """Load a scenario from a YAML file."""
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return cls(**data)

    @property
    def component_map(self) -> dict[str, ComponentTemplate]:
        return {c.exe: c for c in self.components}

    @property
    def noise_map(self) -> dict[str, NoiseTemplate]:
        return {n.exe: n for n in self.noise_exes}

    @property
    def endpoint(self) -> str:
        """Service interface whose REQUEST events make up the workload."""
        if self.request_endpoint is not None:
            return self.request_endpoint
        frontend = self.component_map[self.frontend_exe]
        return f"{frontend.host}:{frontend.port}"


def default_scenario(seed: int = 0) -> ScenarioSpec:
    """Two-host cloud controller/compute scenario used by the demo and the tests.

    Covers count-linear (qemu-kvm, lvcreate, ovs-vsctl, iscsiadm),
    degree-linear (libvirtd, cinder-volume, ovsdb-server, nova-compute),
    constant (nova-api, nova-conductor) and noise (logrotate, sshd-session,
    crond-job) features.
    """
    return ScenarioSpec(
        hosts=["controller", "compute-1"],
        root_exe="systemd",
        frontend_exe="nova-api",
        request_endpoint="controller:8774",
        seed=seed,
        components=[
            ComponentTemplate(exe="nova-api", host="controller", baseline_instances=1, port=8774),
            ComponentTemplate(exe="nova-conductor", host="controller", baseline_instances=1),
            ComponentTemplate(
                exe="cinder-volume", host="controller", baseline_instances=1, port=8776
            ),
            ComponentTemplate(
                exe="lvcreate",
                host="controller",
                parent="cinder-volume",
                per_request_spawn_count=1,
                per_request_ipc_edges=["cinder-volume"],
            ),
            ComponentTemplate(exe="nova-compute", host="compute-1", baseline_instances=1),
            ComponentTemplate(exe="libvirtd", host="compute-1", baseline_instances=1, port=16509),
            ComponentTemplate(
                exe="ovsdb-server", host="compute-1", baseline_instances=1, port=6640
            ),
            ComponentTemplate(
                exe="qemu-kvm",
                host="compute-1",
                parent="libvirtd",
                per_request_spawn_count=2,
                per_request_ipc_edges=["libvirtd"],
            ),
            ComponentTemplate(
                exe="ovs-vsctl",
                host="compute-1",
                parent="nova-compute",
                per_request_spawn_count=1,
                per_request_ipc_edges=["ovsdb-server"],
            ),
            ComponentTemplate(
                exe="iscsiadm",
                host="compute-1",
                parent="nova-compute",
                per_request_spawn_count=1,
                per_request_ipc_edges=["cinder-volume"],
            ),
        ],
        noise_exes=[
            NoiseTemplate(exe="logrotate", host="controller", low=1, high=4),
            NoiseTemplate(exe="sshd-session", host="compute-1", low=1, high=3),
            NoiseTemplate(exe="crond-job", host="controller", low=1, high=5),
        ],
    )


@dataclass(frozen=True)
class FeatureClasses:
    """Ground truth of which features follow workload exactly and which are noise."""

    affine: frozenset[FeatureId]
    noise: frozenset[FeatureId]


def feature_classes(spec: ScenarioSpec) -> FeatureClasses:
    affine = {FeatureId(spec.root_exe, Metric.COUNT)}
    for component in spec.components:
        affine.update(FeatureId(component.exe, metric) for metric in Metric)
    noise = {FeatureId(n.exe, metric) for n in spec.noise_exes for metric in Metric}
    root_degree = FeatureId(spec.root_exe, Metric.DEGREE)
    (noise if spec.noise_exes else affine).add(root_degree)
    return FeatureClasses(affine=frozenset(affine), noise=frozenset(noise))


def eligible_targets(spec: ScenarioSpec, mode: FaultMode) -> list[str]:
    """Component executables a fault of this mode can perturb in every run."""
    if mode is FaultMode.DROP_EDGE:
        talking = set()
        for component in spec.components:
            if component.per_request_ipc_edges:
                talking.add(component.exe)
                talking.update(component.per_request_ipc_edges)
        return [c.exe for c in spec.components if c.exe in talking]
    return [c.exe for c in spec.components]


class _RunBuilder:
    """Accumulates the events of one run in time order."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.events: list[Event] = []
        self.instances: dict[str, list[NodeKey]] = defaultdict(list)
        self.ts = 0.0
        self._next_pid = {host: FIRST_PID for host in spec.hosts}

    def advance(self, dt: float) -> None:
        self.ts = round(self.ts + dt, 6)

    def emit(self, **fields) -> None:
        self.events.append(Event(ts=self.ts, **fields))
        self.advance(EVENT_TICK)

    def spawn(self, exe: str, host: str, parent: NodeKey, parent_exe: str) -> NodeKey:
        pid = self._next_pid[host]
        self._next_pid[host] += 1
        self.emit(
            kind=EventKind.SPAWN, host=host, pid=pid, exe=exe, ppid=parent[1], parent_exe=parent_exe
        )
        self.instances[exe].append((host, pid))
        return host, pid

    def interact(self, src: NodeKey, src_exe: str, dst: NodeKey, dst_exe: str) -> None:
        if src[0] == dst[0]:
            self.emit(
                kind=EventKind.IPC,
                host=src[0],
                pid=src[1],
                exe=src_exe,
                peer_pid=dst[1],
                peer_exe=dst_exe,
            )
        else:
            self.emit(
                kind=EventKind.NET,
                host=src[0],
                pid=src[1],
                exe=src_exe,
                peer_pid=dst[1],
                peer_exe=dst_exe,
                peer_host=dst[0],
            )

    def parent_of(self, exe: str) -> tuple[NodeKey, str]:
        """Process that spawns new instances of an executable."""
        component = self.spec.component_map.get(exe)
        if component is not None:
            if component.parent is None or component.parent == self.spec.root_exe:
                return (component.host, ROOT_PID), self.spec.root_exe
            return self.instances[component.parent][0], component.parent
        return (self.spec.noise_map[exe].host, ROOT_PID), self.spec.root_exe


def _normal_events(builder: _RunBuilder, workload: int, rng: np.random.Generator) -> None:
    spec = builder.spec
    for component in spec.components:
        parent, parent_exe = builder.parent_of(component.exe)
        for _ in range(component.baseline_instances):
            key = builder.spawn(component.exe, component.host, parent, parent_exe)
            if component.port is not None:
                builder.emit(
                    kind=EventKind.LISTEN,
                    host=key[0],
                    pid=key[1],
                    exe=component.exe,
                    endpoint=f"{component.host}:{component.port}",
                )
    for noise in spec.noise_exes:
        for _ in range(int(rng.integers(noise.low, noise.high + 1))):
            builder.spawn(noise.exe, noise.host, (noise.host, ROOT_PID), spec.root_exe)

    frontend = builder.instances[spec.frontend_exe][0]
    for _ in range(workload):
        builder.advance(REQUEST_GAP)
        builder.emit(
            kind=EventKind.REQUEST,
            host=frontend[0],
            pid=frontend[1],
            exe=spec.frontend_exe,
            endpoint=spec.endpoint,
        )
        for component in spec.components:
            if not component.per_request_spawn_count:
                continue
            parent, parent_exe = builder.parent_of(component.exe)
            for _ in range(component.per_request_spawn_count):
                key = builder.spawn(component.exe, component.host, parent, parent_exe)
                for peer in component.per_request_ipc_edges:
                    builder.interact(key, component.exe, builder.instances[peer][0], peer)


def _suppress_spawn(builder: _RunBuilder, target: str, magnitude: int) -> int:
    victims = builder.instances[target][-magnitude:]
    removed = set(victims)
    for event in builder.events:
        if event.kind is EventKind.SPAWN and event.peer_key in removed:
            removed.add(event.key)
    # requests still arrive even if the process that served them is gone
    builder.events = [
        event
        for event in builder.events
        if event.kind is EventKind.REQUEST
        or (event.key not in removed and event.peer_key not in removed)
    ]
    return len(victims)


def _drop_edges(builder: _RunBuilder, target: str, magnitude: int) -> int:
    edges = []
    for event in builder.events:
        if event.kind in (EventKind.IPC, EventKind.NET) and target in (event.exe, event.peer_exe):
            edge = edge_of(event)
            if edge not in edges:
                edges.append(edge)
    dropped = set(edges[-magnitude:])
    builder.events = [event for event in builder.events if edge_of(event) not in dropped]
    return len(dropped)


def _inject(builder: _RunBuilder, fault: FaultSpec) -> FaultSpec:
    """Apply a fault to a finished normal run; returns it with the effective magnitude."""
    spec = builder.spec
    target = fault.target
    if target not in spec.component_map and target not in spec.noise_map:
        raise ScenarioError(f"fault target {target!r} is not part of the scenario")

    if fault.mode is FaultMode.SUPPRESS_SPAWN:
        applied = _suppress_spawn(builder, target, fault.magnitude)
    elif fault.mode is FaultMode.DROP_EDGE:
        applied = _drop_edges(builder, target, fault.magnitude)
    elif fault.mode is FaultMode.EXTRA_SPAWN:
        builder.advance(REQUEST_GAP)
        parent, parent_exe = builder.parent_of(target)
        host = parent[0]
        for _ in range(fault.magnitude):
            builder.spawn(target, host, parent, parent_exe)
        applied = fault.magnitude
    else:
        if not builder.instances[target]:
            raise ScenarioError(f"{target!r} has no instance to spawn {target}-alien")
        builder.advance(REQUEST_GAP)
        owner = builder.instances[target][0]
        for _ in range(fault.magnitude):
            builder.spawn(f"{target}-alien", owner[0], owner, target)
        applied = fault.magnitude

    if applied == 0:
        raise ScenarioError(f"{fault} has nothing to perturb in this run")
    if applied != fault.magnitude:
        logger.info("%s clamped to magnitude %d", fault, applied)
    return fault.model_copy(update={"magnitude": applied})


def _build_run(
    spec: ScenarioSpec,
    workload: int,
    fault: FaultSpec | None,
    seed: int,
    run_id: str,
) -> tuple[RunTrace, FaultSpec | None]:
    if workload < 1:
        raise ScenarioError(f"workload must be at least 1, got {workload}")
    rng = np.random.Generator(np.random.PCG64(seed))
    builder = _RunBuilder(spec)
    _normal_events(builder, workload, rng)
    applied = _inject(builder, fault) if fault is not None else None
    trace = RunTrace(
        run_id=run_id,
        label=Label.FAULT if fault is not None else Label.NORMAL,
        workload=workload,
        events=tuple(builder.events),
    )
    return trace, applied


def generate_run(
    spec: ScenarioSpec,
    workload: int,
    fault: FaultSpec | None = None,
    *,
    seed: int | None = None,
    run_id: str | None = None,
) -> RunTrace:
    """Emit one run: baseline spawns, noise, then one REQUEST and its work per request.

    ``seed`` defaults to the scenario seed; the same arguments always give
    the same trace.
    """
    seed = spec.seed if seed is None else seed
    run_id = run_id or f"run-{seed}-w{workload}"
    trace, _ = _build_run(spec, workload, fault, seed, run_id)
    return trace


class RunRecord(BaseModel):
    run_id: str
    label: Label
    workload: int = Field(ge=0)
    fault: FaultSpec | None = None


class GeneratorInfo(BaseModel):
    rng: str = RNG_NAME
    seed: int
    min_workload: int
    max_workload: int


class DatasetManifest(BaseModel):
    format: Literal["tracelearn-dataset"] = DATASET_FORMAT
    version: int = DATASET_VERSION
    generator: GeneratorInfo | None = None
    scenario: ScenarioSpec | None = None
    runs: list[RunRecord] = Field(default_factory=list)


@dataclass(frozen=True)
class Dataset:
    root: Path
    traces: tuple[RunTrace, ...]
    manifest: DatasetManifest | None = None

    @property
    def normal(self) -> list[RunTrace]:
        return [trace for trace in self.traces if trace.label is Label.NORMAL]

    @property
    def fault(self) -> list[RunTrace]:
        return [trace for trace in self.traces if trace.label is Label.FAULT]


def generate_dataset(
    spec: ScenarioSpec,
    out_dir: str | Path,
    n_normal: int = 60,
    n_fault: int = 120,
    workload_range: tuple[int, int] = (1, 5),
    seed: int | None = None,
    *,
    modes: Sequence[FaultMode] = tuple(FaultMode),
    targets: Sequence[str] | None = None,
    max_magnitude: int = 2,
) -> DatasetManifest:
    """Write ``n_normal + n_fault`` trace files and their manifest into ``out_dir``.

    Workloads cycle through the range, fault modes are round-robined and each
    mode's targets are round-robined over the eligible components (or over
    ``targets`` when given). Run ``i`` is generated with seed ``seed + i``.
    """
    lo, hi = workload_range
    if n_normal < MIN_NORMAL_RUNS:
        raise DatasetError(
            f"{n_normal} normal runs requested; cross-validation needs at least {MIN_NORMAL_RUNS}"
        )
    if n_fault < 0:
        raise DatasetError("n_fault must not be negative")
    if lo < 1 or hi < lo:
        raise DatasetError(f"invalid workload range {lo}..{hi}")
    if n_fault and not modes:
        raise DatasetError("fault runs requested but no fault mode enabled")
    if max_magnitude < 1:
        raise DatasetError("max_magnitude must be at least 1")
    seed = spec.seed if seed is None else seed
    span = hi - lo + 1
    magnitudes = np.random.Generator(np.random.PCG64(seed))

    plan: list[tuple[str, int, FaultSpec | None]] = []
    for i in range(n_normal):
        plan.append((f"normal-{i:04d}", lo + i % span, None))
    for j in range(n_fault):
        mode = modes[j % len(modes)]
        pool = eligible_targets(spec, mode)
        if targets is not None:
            noise_ok = mode is not FaultMode.DROP_EDGE
            pool = [t for t in targets if t in pool or (noise_ok and t in spec.noise_map)]
        if not pool:
            raise DatasetError(f"no fault target available for {mode}")
        target = pool[(j // len(modes)) % len(pool)]
        magnitude = int(magnitudes.integers(1, max_magnitude + 1))
        fault = FaultSpec(mode=mode, target=target, magnitude=magnitude)
        plan.append((f"fault-{j:04d}", lo + j % span, fault))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for index, (run_id, workload, fault) in enumerate(plan):
        trace, applied = _build_run(spec, workload, fault, seed + index, run_id)
        write_trace(trace, out / f"{run_id}.trace")
        records.append(
            RunRecord(run_id=run_id, label=trace.label, workload=workload, fault=applied)
        )

    manifest = DatasetManifest(
        generator=GeneratorInfo(seed=seed, min_workload=lo, max_workload=hi),
        scenario=spec,
        runs=records,
    )
    with open(out / MANIFEST_NAME, "w") as f:
        yaml.safe_dump(manifest.model_dump(mode="json"), f, sort_keys=False)
    logger.info("wrote %d normal and %d fault runs to %s", n_normal, n_fault, out)
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return DatasetManifest(**data)
    except (yaml.YAMLError, ValidationError, TypeError) as exc:
        raise DatasetError(f"{path}: invalid dataset manifest: {exc}") from None


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset directory.

    With a manifest, exactly the listed runs are read and their labels and
    workloads checked against it. Without one, every ``*.trace`` file in the
    directory is read in name order.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a dataset directory")
    manifest_path = root / MANIFEST_NAME
    manifest = load_manifest(manifest_path) if manifest_path.exists() else None
    if manifest is not None:
        files: Iterable[Path] = (root / f"{run.run_id}.trace" for run in manifest.runs)
    else:
        files = sorted(root.glob("*.trace"))

    traces = []
    for file in files:
        try:
            traces.append(parse_trace(file))
        except FileNotFoundError:
            raise DatasetError(f"{file}: listed in the manifest but missing") from None
        except TraceLearnError as exc:
            raise DatasetError(f"{file}: {exc}") from None
    if manifest is not None:
        for run, trace in zip(manifest.runs, traces):
            if (run.run_id, run.label, run.workload) != (trace.run_id, trace.label, trace.workload):
                raise DatasetError(f"{run.run_id}: trace header disagrees with the manifest")
    if not traces:
        raise DatasetError(f"{root}: no trace files")
    logger.info("loaded %d runs from %s", len(traces), root)
    return Dataset(root=root, traces=tuple(traces), manifest=manifest)
