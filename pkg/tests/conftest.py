"""Pytest configuration and fixtures."""

from pathlib import Path

import pytest

from tracelearn.plan import derive_plan
from tracelearn.synth import (
    ComponentTemplate,
    ScenarioSpec,
    default_scenario,
    generate_dataset,
    generate_run,
    load_dataset,
)
from tracelearn.traces import Event, EventKind
from tracelearn.training import TrainingCorpus, train

REPO_ROOT = Path(__file__).resolve().parents[1]


def spawn(ts, pid, exe, ppid, parent_exe, host="h1"):
    return Event(
        ts=ts, kind=EventKind.SPAWN, host=host, pid=pid, exe=exe, ppid=ppid, parent_exe=parent_exe
    )


def ipc(ts, pid, exe, peer_pid, peer_exe, host="h1"):
    return Event(
        ts=ts, kind=EventKind.IPC, host=host, pid=pid, exe=exe, peer_pid=peer_pid, peer_exe=peer_exe
    )


def request(ts, endpoint="h1:8774", host="h1"):
    return Event(ts=ts, kind=EventKind.REQUEST, host=host, endpoint=endpoint)


@pytest.fixture(scope="session")
def scenario() -> ScenarioSpec:
    """The built-in two-host scenario."""
    return default_scenario()


@pytest.fixture(scope="session")
def vm_scenario() -> ScenarioSpec:
    """Single-host scenario where every VM request starts two qemu-kvm processes."""
    return ScenarioSpec(
        hosts=["compute-1"],
        frontend_exe="nova-api",
        components=[
            ComponentTemplate(exe="nova-api", host="compute-1", baseline_instances=1, port=8774),
            ComponentTemplate(exe="libvirtd", host="compute-1", baseline_instances=1),
            ComponentTemplate(
                exe="qemu-kvm",
                host="compute-1",
                parent="libvirtd",
                per_request_spawn_count=2,
                per_request_ipc_edges=["libvirtd"],
            ),
        ],
    )


@pytest.fixture(scope="session")
def normal_traces(scenario):
    """30 fault-free runs, workloads cycling 1..5."""
    return [
        generate_run(scenario, 1 + i % 5, seed=i, run_id=f"normal-{i:04d}") for i in range(30)
    ]


@pytest.fixture(scope="session")
def model(normal_traces):
    return train(TrainingCorpus.from_traces(normal_traces))


@pytest.fixture(scope="session")
def plan(model):
    return derive_plan(model)


@pytest.fixture(scope="session")
def vm_model(vm_scenario):
    traces = [
        generate_run(vm_scenario, 1 + i % 5, seed=i, run_id=f"vm-{i:04d}") for i in range(10)
    ]
    return train(TrainingCorpus.from_traces(traces))


@pytest.fixture(scope="session")
def dataset_dir(scenario, tmp_path_factory) -> Path:
    """Default desk-scale dataset: 60 normal and 120 fault runs, workloads 1..5."""
    out = tmp_path_factory.mktemp("dataset")
    generate_dataset(scenario, out, n_normal=60, n_fault=120, workload_range=(1, 5), seed=0)
    return out


@pytest.fixture(scope="session")
def dataset(dataset_dir):
    return load_dataset(dataset_dir)
