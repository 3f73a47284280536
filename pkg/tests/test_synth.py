"""Synthetic scenario runs, fault injection and dataset directories."""

import pytest
import yaml
from pydantic import ValidationError

from tracelearn.errors import DatasetError, ScenarioError
from tracelearn.graph import EdgeKind, build_graph
from tracelearn.synth import (
    MANIFEST_NAME,
    ComponentTemplate,
    FaultMode,
    FaultSpec,
    ScenarioSpec,
    default_scenario,
    eligible_targets,
    generate_dataset,
    generate_run,
    load_dataset,
)
from tracelearn.traces import EventKind, Label, count_requests

from .conftest import REPO_ROOT


def spawns_of(trace, exe) -> int:
    return sum(1 for e in trace.events if e.kind is EventKind.SPAWN and e.exe == exe)


def exes(trace) -> set[str]:
    return {node.exe for node in build_graph(trace).nodes}


def ipc_edges(graph) -> list:
    return [e for e in graph.edges if e.kind is EdgeKind.IPC]


@pytest.mark.smoke
def test_vm_requests_spawn_two_qemu_each(vm_scenario):
    """Three VM requests start six qemu-kvm processes."""
    trace = generate_run(vm_scenario, 3)
    assert spawns_of(trace, "qemu-kvm") == 6
    assert count_requests(trace, vm_scenario.endpoint) == 3
    assert trace.label is Label.NORMAL
    assert trace.workload == 3


@pytest.mark.smoke
def test_suppressed_spawn_removes_one_instance(vm_scenario):
    """SUPPRESS_SPAWN of one qemu-kvm leaves one of the two."""
    fault = FaultSpec(mode=FaultMode.SUPPRESS_SPAWN, target="qemu-kvm", magnitude=1)
    trace = generate_run(vm_scenario, 1, fault)
    assert spawns_of(trace, "qemu-kvm") == 1
    assert trace.label is Label.FAULT
    assert trace.workload == 1


@pytest.mark.smoke
def test_same_arguments_same_trace(scenario):
    """Generation is a pure function of its arguments."""
    fault = FaultSpec(mode=FaultMode.DROP_EDGE, target="libvirtd", magnitude=2)
    assert generate_run(scenario, 4, fault, seed=11) == generate_run(scenario, 4, fault, seed=11)
    assert generate_run(scenario, 2) == generate_run(scenario, 2, seed=scenario.seed)


@pytest.mark.smoke
def test_unknown_fault_target(scenario):
    """Targets must belong to the scenario."""
    with pytest.raises(ScenarioError, match="not part of the scenario"):
        generate_run(scenario, 1, FaultSpec(mode=FaultMode.EXTRA_SPAWN, target="nope"))
    with pytest.raises(ScenarioError):
        generate_run(scenario, 0)


@pytest.mark.regression
def test_suppression_cascades_to_children(vm_scenario):
    """Suppressing libvirtd also removes the qemu-kvm processes it would have spawned."""
    fault = FaultSpec(mode=FaultMode.SUPPRESS_SPAWN, target="libvirtd", magnitude=1)
    trace = generate_run(vm_scenario, 2, fault)
    assert exes(trace) == {"systemd", "nova-api"}
    assert count_requests(trace) == 2


@pytest.mark.regression
def test_extra_spawn_adds_unrequested_instances(vm_scenario):
    """EXTRA_SPAWN adds magnitude instances under the usual parent."""
    fault = FaultSpec(mode=FaultMode.EXTRA_SPAWN, target="qemu-kvm", magnitude=3)
    trace = generate_run(vm_scenario, 2, fault)
    assert spawns_of(trace, "qemu-kvm") == 7
    extra = [e for e in trace.events if e.kind is EventKind.SPAWN and e.exe == "qemu-kvm"][-1]
    assert extra.parent_exe == "libvirtd"
    assert count_requests(trace) == 2


@pytest.mark.regression
def test_drop_edge_removes_interactions(vm_scenario):
    """DROP_EDGE removes that many distinct edges touching the target."""
    fault = FaultSpec(mode=FaultMode.DROP_EDGE, target="qemu-kvm", magnitude=1)
    normal = build_graph(generate_run(vm_scenario, 2))
    faulty = build_graph(generate_run(vm_scenario, 2, fault))
    assert len(ipc_edges(normal)) == 4
    assert len(ipc_edges(faulty)) == 3
    assert faulty.nodes == normal.nodes


@pytest.mark.regression
def test_alien_process_has_an_unseen_exe(vm_scenario):
    """ALIEN_PROCESS spawns '<target>-alien' children of the target."""
    fault = FaultSpec(mode=FaultMode.ALIEN_PROCESS, target="libvirtd", magnitude=2)
    trace = generate_run(vm_scenario, 1, fault)
    assert spawns_of(trace, "libvirtd-alien") == 2
    aliens = [e for e in trace.events if e.exe == "libvirtd-alien"]
    assert all(e.parent_exe == "libvirtd" for e in aliens)


@pytest.mark.regression
def test_drop_edge_targets_only_talking_components(scenario):
    """Components without interactions cannot lose an edge in every run."""
    targets = eligible_targets(scenario, FaultMode.DROP_EDGE)
    assert "nova-conductor" not in targets
    assert "nova-api" not in targets
    assert {"qemu-kvm", "libvirtd", "cinder-volume"} <= set(targets)
    assert len(eligible_targets(scenario, FaultMode.SUPPRESS_SPAWN)) == len(scenario.components)


@pytest.mark.regression
def test_small_dataset(tmp_path, scenario):
    """Counts, labels and the manifest of a small dataset."""
    manifest = generate_dataset(scenario, tmp_path, n_normal=10, n_fault=8, seed=7)
    assert len(list(tmp_path.glob("*.trace"))) == 18
    assert (tmp_path / MANIFEST_NAME).exists()
    assert {run.fault.mode for run in manifest.runs if run.fault} == set(FaultMode)
    assert all(1 <= run.fault.magnitude <= 2 for run in manifest.runs if run.fault)
    assert manifest.generator.seed == 7

    dataset = load_dataset(tmp_path)
    assert len(dataset.normal) == 10
    assert len(dataset.fault) == 8
    assert [t.run_id for t in dataset.traces] == [run.run_id for run in manifest.runs]
    assert {t.workload for t in dataset.normal} == {1, 2, 3, 4, 5}
    assert dataset.manifest == manifest


@pytest.mark.regression
def test_too_few_normal_runs(tmp_path, scenario):
    """Cross-validation needs at least ten normal runs."""
    with pytest.raises(DatasetError):
        generate_dataset(scenario, tmp_path, n_normal=5, n_fault=5)
    with pytest.raises(DatasetError):
        generate_dataset(scenario, tmp_path, workload_range=(3, 2))


@pytest.mark.regression
def test_same_seed_same_bytes(tmp_path, scenario):
    """Two generations with one seed are bit-identical."""
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        generate_dataset(scenario, out, n_normal=10, n_fault=6, seed=3)
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


@pytest.mark.regression
def test_dataset_without_manifest(tmp_path, scenario):
    """Without a manifest every trace file is read in name order."""
    generate_dataset(scenario, tmp_path, n_normal=10, n_fault=2, seed=1)
    (tmp_path / MANIFEST_NAME).unlink()
    dataset = load_dataset(tmp_path)
    assert dataset.manifest is None
    assert [t.run_id for t in dataset.traces][:2] == ["fault-0000", "fault-0001"]
    assert len(dataset.normal) == 10


@pytest.mark.regression
def test_manifest_disagreement(tmp_path, scenario):
    """A manifest whose workload disagrees with the trace header is rejected."""
    generate_dataset(scenario, tmp_path, n_normal=10, n_fault=0, seed=1)
    path = tmp_path / MANIFEST_NAME
    data = yaml.safe_load(path.read_text())
    data["runs"][0]["workload"] += 1
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    with pytest.raises(DatasetError, match="disagrees"):
        load_dataset(tmp_path)


@pytest.mark.regression
def test_empty_or_missing_directory(tmp_path):
    """No trace files, no dataset."""
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "absent")


@pytest.mark.regression
def test_scenario_topology_is_validated():
    """Unknown hosts, late parents, duplicates and idle frontends are rejected."""
    api = ComponentTemplate(exe="api", host="h1", baseline_instances=1, port=80)
    cases = [
        dict(hosts=["h1"], frontend_exe="api", components=[api.model_copy(update={"host": "h2"})]),
        dict(
            hosts=["h1"],
            frontend_exe="api",
            components=[
                api,
                ComponentTemplate(exe="w", host="h1", parent="d", per_request_spawn_count=1),
                ComponentTemplate(exe="d", host="h1", baseline_instances=1),
            ],
        ),
        dict(hosts=["h1"], frontend_exe="api", components=[api, api]),
        dict(
            hosts=["h1"],
            frontend_exe="api",
            components=[ComponentTemplate(exe="api", host="h1", per_request_spawn_count=1)],
        ),
    ]
    for case in cases:
        with pytest.raises(ValidationError):
            ScenarioSpec(**case)
    with pytest.raises(ValidationError):
        ComponentTemplate(exe="idle", host="h1")


@pytest.mark.smoke
def test_demo_scenario_file_matches_builtin():
    """The shipped scenario file describes the built-in scenario."""
    assert ScenarioSpec.from_file(REPO_ROOT / "demo" / "scenario.yml") == default_scenario()
