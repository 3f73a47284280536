"""Process-interaction graph of one run."""

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import NamedTuple

import networkx as nx

from .errors import GraphConsistencyError, UnknownNodeError
from .traces import Event, EventKind, RunTrace

logger = logging.getLogger(__name__)

NodeKey = tuple[str, int]


class EdgeKind(StrEnum):
    SPAWN = "SPAWN"
    IPC = "IPC"
    NET = "NET"


EDGE_EVENT_KINDS = {
    EventKind.SPAWN: EdgeKind.SPAWN,
    EventKind.IPC: EdgeKind.IPC,
    EventKind.NET: EdgeKind.NET,
}

# DOT attributes per edge kind
EDGE_STYLES = {
    EdgeKind.SPAWN: {"style": "solid", "color": "black"},
    EdgeKind.IPC: {"style": "dashed", "color": "blue"},
    EdgeKind.NET: {"style": "dotted", "color": "red"},
}


class ProcessNode(NamedTuple):
    key: NodeKey
    exe: str


class Edge(NamedTuple):
    src: NodeKey
    dst: NodeKey
    kind: EdgeKind


def edge_of(event: Event) -> Edge | None:
    """Directed edge contributed by an event, or None for LISTEN/REQUEST."""
    kind = EDGE_EVENT_KINDS.get(event.kind)
    if kind is None:
        return None
    if kind is EdgeKind.SPAWN:
        return Edge(event.peer_key, event.key, kind)
    return Edge(event.key, event.peer_key, kind)


def endpoint_exes(event: Event) -> tuple[tuple[NodeKey, str], tuple[NodeKey, str]] | None:
    """Both (key, exe) observations carried by an edge-producing event, source first."""
    if event.kind is EventKind.SPAWN:
        return (event.peer_key, event.parent_exe), (event.key, event.exe)
    if event.kind in (EventKind.IPC, EventKind.NET):
        return (event.key, event.exe), (event.peer_key, event.peer_exe)
    return None


@dataclass(frozen=True)
class SystemGraph:
    """Typed directed graph of the processes of one run and their interactions.

    Backed by a frozen ``networkx.MultiDiGraph`` whose edge keys are the edge
    kinds, so each (src, dst, kind) triple exists at most once.
    """

    run_id: str
    graph: nx.MultiDiGraph = field(repr=False, compare=False)

    @property
    def nodes(self) -> frozenset[ProcessNode]:
        return frozenset(ProcessNode(key, exe) for key, exe in self.graph.nodes(data="exe"))

    @property
    def edges(self) -> frozenset[Edge]:
        return frozenset(Edge(src, dst, kind) for src, dst, kind in self.graph.edges(keys=True))

    def exe_of(self, key: NodeKey) -> str:
        try:
            return self.graph.nodes[key]["exe"]
        except KeyError:
            raise UnknownNodeError(f"no process {key!r} in graph {self.run_id!r}") from None

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SystemGraph):
            return NotImplemented
        return (
            self.run_id == other.run_id
            and self.nodes == other.nodes
            and self.edges == other.edges
        )


def _add_node(graph: nx.MultiDiGraph, key: NodeKey, exe: str) -> None:
    known = graph.nodes.get(key)
    if known is None:
        graph.add_node(key, exe=exe)
    elif known["exe"] != exe:
        raise GraphConsistencyError(
            f"process {key[0]}:{key[1]} seen as {known['exe']!r} and {exe!r}"
        )


def graph_from_events(run_id: str, events: Iterable[Event]) -> SystemGraph:
    """Build the system graph from any event sequence."""
    graph = nx.MultiDiGraph()
    for event in events:
        sides = endpoint_exes(event)
        if sides is None:
            continue
        for key, exe in sides:
            _add_node(graph, key, exe)
        src, dst, kind = edge_of(event)
        if not graph.has_edge(src, dst, key=kind):
            graph.add_edge(src, dst, key=kind)
    logger.debug(
        "built graph %s: %d nodes, %d edges",
        run_id,
        graph.number_of_nodes(),
        graph.number_of_edges(),
    )
    return SystemGraph(run_id=run_id, graph=nx.freeze(graph))


def build_graph(trace: RunTrace) -> SystemGraph:
    """Build the system graph of a run trace."""
    return graph_from_events(trace.run_id, trace.events)


def node_degree(graph: SystemGraph, key: NodeKey) -> int:
    """In-degree plus out-degree of a process across all edge kinds."""
    if key not in graph.graph:
        raise UnknownNodeError(f"no process {key!r} in graph {graph.run_id!r}")
    return graph.graph.degree(key)


def node_signatures(graph: SystemGraph) -> dict[str, set[frozenset[EdgeKind]]]:
    """For each exe, the distinct sets of edge kinds incident to its nodes."""
    signatures: dict[str, set[frozenset[EdgeKind]]] = {}
    g = graph.graph
    for key, exe in g.nodes(data="exe"):
        kinds = {kind for _, _, kind in g.in_edges(key, keys=True)}
        kinds.update(kind for _, _, kind in g.out_edges(key, keys=True))
        signatures.setdefault(exe, set()).add(frozenset(kinds))
    return signatures


def _quote(value: object) -> str:
    text = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{text}"'


def _node_id(key: NodeKey) -> str:
    return _quote(f"{key[0]}:{key[1]}")


def to_dot(graph: SystemGraph) -> str:
    """Render the graph as DOT text, nodes labelled by exe and edges styled by kind."""
    lines = [f"digraph {_quote(graph.run_id)} {{"]
    for key, exe in sorted(graph.graph.nodes(data="exe")):
        label = _quote(f"{exe}\n{key[0]}:{key[1]}").replace("\n", "\\n")
        lines.append(f"  {_node_id(key)} [label={label}, shape=box];")
    for src, dst, kind in sorted(graph.graph.edges(keys=True)):
        attrs = EDGE_STYLES[kind]
        lines.append(
            f"  {_node_id(src)} -> {_node_id(dst)} "
            f"[label={_quote(kind)}, style={attrs['style']}, color={attrs['color']}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(graph: SystemGraph, path: str | Path) -> None:
    """Write the DOT rendering of a graph to a file."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_dot(graph))
