"""
Simplicial view of per-phase communication.

Each phase of a failure-free run induces a directed communication graph;
the clique complex of its undirected support describes the phase's
topology: maximal simplices, dimension, skeletons and connected components.
"""

import itertools
import logging
from dataclasses import dataclass, replace
from typing import FrozenSet, Iterable, List, Optional, Set, Tuple, Union

import networkx as nx
import pandas as pd

from .data_models import ClusterConfig, FaultPlan, NodeId, Protocol, Transaction
from .errors import UnknownPhase
from .protocols import create_engine
from .simulator import Simulator

logger = logging.getLogger(__name__)

# Above this many vertices maximal cliques are not enumerated.
EXACT_VERTEX_LIMIT = 64

Simplex = FrozenSet[NodeId]
Edge = Tuple[NodeId, NodeId]


@dataclass(frozen=True)
class CommGraph:
    """Directed communication graph of one phase; edges are oriented 1-simplices."""
    vertices: FrozenSet[NodeId]
    edges: FrozenSet[Edge]

    def __post_init__(self):
        loops = [edge for edge in self.edges if edge[0] == edge[1]]
        if loops:
            raise ValueError(f"Self-loop edges are not 1-simplices: {loops[:3]}")
        stray = {node for edge in self.edges for node in edge} - set(self.vertices)
        if stray:
            raise ValueError(f"Edges reference unknown vertices: {sorted(stray)[:3]}")

    def reversed(self) -> "CommGraph":
        return CommGraph(self.vertices, frozenset((dst, src) for src, dst in self.edges))

    def undirected(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(sorted(self.vertices))
        graph.add_edges_from(self.edges)
        return graph


@dataclass(frozen=True)
class CommComplex:
    """
    A complex given by its maximal simplices.

    Attributes:
        vertices: Vertex set
        maximal_simplices: Maximal simplices, sorted
        dimension: Dimension of the largest maximal simplex (-1 when empty)
        exact: False when the simplices are a lower bound from per-ledger structure
    """
    vertices: FrozenSet[NodeId]
    maximal_simplices: Tuple[Simplex, ...]
    dimension: int
    exact: bool = True

    def contains(self, face: Iterable[NodeId]) -> bool:
        """Whether `face` is a face of the complex."""
        face = frozenset(face)
        return bool(face) and any(face <= simplex for simplex in self.maximal_simplices)

    def faces(self, dimension: Optional[int] = None) -> Set[Simplex]:
        """Every face, or only those of the given dimension."""
        sizes = range(1, self.dimension + 2) if dimension is None else [dimension + 1]
        found: Set[Simplex] = set()
        for simplex in self.maximal_simplices:
            for size in sizes:
                if size <= len(simplex):
                    found.update(frozenset(face) for face in itertools.combinations(sorted(simplex), size))
        return found

    @property
    def edges(self) -> Set[Simplex]:
        return self.faces(1)


def _sort_simplices(simplices: Iterable[Simplex]) -> Tuple[Simplex, ...]:
    return tuple(sorted(set(simplices), key=lambda simplex: (-len(simplex), sorted(simplex))))


def _maximal_only(simplices: Iterable[Simplex]) -> List[Simplex]:
    unique = set(simplices)
    return [simplex for simplex in unique if not any(simplex < other for other in unique)]


def _complex(vertices: FrozenSet[NodeId], simplices: Iterable[Simplex], exact: bool = True) -> CommComplex:
    ordered = _sort_simplices(simplices)
    dimension = max((len(simplex) - 1 for simplex in ordered), default=-1)
    return CommComplex(vertices, ordered, dimension, exact)


def clique_complex(graph: CommGraph) -> CommComplex:
    """
    Clique complex of the graph's undirected support.

    Up to EXACT_VERTEX_LIMIT vertices the maximal cliques are enumerated.
    Beyond that, each ledger whose members are pairwise connected contributes
    one simplex and every other edge a 1-simplex, giving a lower bound on the
    dimension.
    """
    support = graph.undirected()
    if len(graph.vertices) <= EXACT_VERTEX_LIMIT:
        cliques = [frozenset(clique) for clique in nx.find_cliques(support)]
        return _complex(graph.vertices, cliques)

    logger.info("Complex on %d vertices: using per-ledger lower bound", len(graph.vertices))
    by_ledger = {}
    for node in graph.vertices:
        by_ledger.setdefault(node.ledger, set()).add(node)
    simplices: List[Simplex] = []
    for members in by_ledger.values():
        if support.subgraph(members).number_of_edges() == len(members) * (len(members) - 1) // 2:
            simplices.append(frozenset(members))
    covered = [simplex for simplex in simplices if len(simplex) > 1]
    for a, b in support.edges():
        edge = frozenset((a, b))
        if not any(edge <= simplex for simplex in covered):
            simplices.append(edge)
    for node in graph.vertices:
        if not any(node in simplex for simplex in simplices):
            simplices.append(frozenset((node,)))
    return _complex(graph.vertices, _maximal_only(simplices), exact=False)


def skeleton(c: CommComplex, d: int) -> CommComplex:
    """All faces of `c` with dimension at most `d`."""
    if d < 0:
        raise ValueError(f"Skeleton dimension must be non-negative: {d}")
    simplices: List[Simplex] = []
    for simplex in c.maximal_simplices:
        if len(simplex) - 1 <= d:
            simplices.append(simplex)
        else:
            simplices.extend(frozenset(face) for face in itertools.combinations(sorted(simplex), d + 1))
    return _complex(c.vertices, _maximal_only(simplices), c.exact)


def components(c: CommComplex) -> int:
    """Connected components of the 1-skeleton."""
    graph = nx.Graph()
    graph.add_nodes_from(c.vertices)
    for simplex in c.maximal_simplices:
        graph.add_edges_from(itertools.combinations(sorted(simplex), 2))
    return nx.number_connected_components(graph)


def _traced_run(protocol: Protocol, cfg: ClusterConfig) -> Tuple[Simulator, Tuple[str, ...]]:
    clean = replace(cfg, fault_plan=FaultPlan())
    engine = create_engine(protocol, clean)
    simulator = Simulator(clean, trace=True)
    simulator.run(engine, [Transaction(0, frozenset(range(clean.k)), payload_tag="topology")])
    return simulator, engine.phase_tags


def phase_graph(protocol: Union[Protocol, str], phase: str, cfg: ClusterConfig) -> CommGraph:
    """
    Directed edges a phase emits in a failure-free single-transaction run.

    Raises:
        UnknownPhase: The tag is not one of the protocol's phases
    """
    protocol = Protocol.parse(protocol)
    simulator, tags = _traced_run(protocol, cfg)
    if phase not in tags:
        raise UnknownPhase(f"{phase} is not a {protocol.label} phase (expected one of {', '.join(tags)})")
    return _graph_from_trace(simulator, phase, cfg)


def _graph_from_trace(simulator: Simulator, phase: str, cfg: ClusterConfig) -> CommGraph:
    edges = frozenset((envelope.src, envelope.dst) for envelope in simulator.trace
                      if envelope.phase == phase and envelope.src != envelope.dst)
    return CommGraph(frozenset(cfg.nodes()), edges)


def topology_report(protocol: Union[Protocol, str], cfg: ClusterConfig) -> pd.DataFrame:
    """Per-phase vertex, edge, dimension and component counts of a failure-free run."""
    protocol = Protocol.parse(protocol)
    simulator, tags = _traced_run(protocol, cfg)
    emitted = {envelope.phase for envelope in simulator.trace}
    rows = []
    for phase in tags:
        if phase not in emitted:
            continue
        graph = _graph_from_trace(simulator, phase, cfg)
        complex_ = clique_complex(graph)
        rows.append({
            "protocol": protocol.value, "phase": phase, "vertices": len(graph.vertices),
            "edges": len(graph.edges), "dimension": complex_.dimension,
            "components": components(complex_), "exact": complex_.exact,
        })
    return pd.DataFrame(rows, columns=["protocol", "phase", "vertices", "edges", "dimension", "components", "exact"])
