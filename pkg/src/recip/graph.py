"""Directed graphs, walks, spanning trees, T-bases of closed walks and gradients.

Vertices are strings and carry a total order (insertion order); every
deterministic choice (BFS order, fundamental-cycle orientation) uses it.
Arcs are stored sorted by ``(order(src), order(dst))`` and that order is the
layout of every per-arc numpy array in the package.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import GraphValidationError, NotAGradientError

Arc = tuple[str, str]


@dataclass(frozen=True)
class DirectedGraph:
    """A finite symmetric, loop-free, connected directed graph.

    Build instances with :func:`build_graph`, which validates the structural
    assumptions; the constructor itself does not.

    ``boundary`` marks vertices created by truncating an infinite graph
    (their outward arcs were cut).  It is empty for genuinely finite graphs.
    """

    vertices: tuple[str, ...]
    arcs: tuple[Arc, ...]
    boundary: frozenset[str] = frozenset()
    max_degree: int = 0

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def arc_index(self) -> dict[Arc, int]:
        return {a: i for i, a in enumerate(self.arcs)}

    @cached_property
    def out_neighbors(self) -> dict[str, tuple[str, ...]]:
        nbrs: dict[str, list[str]] = {v: [] for v in self.vertices}
        for z, w in self.arcs:
            nbrs[z].append(w)
        return {v: tuple(ns) for v, ns in nbrs.items()}

    @cached_property
    def src(self) -> np.ndarray:
        return np.array([self.index[a[0]] for a in self.arcs], dtype=np.intp)

    @cached_property
    def dst(self) -> np.ndarray:
        return np.array([self.index[a[1]] for a in self.arcs], dtype=np.intp)

    @cached_property
    def reverse(self) -> np.ndarray:
        """``reverse[i]`` is the index of the arc opposite to arc ``i``."""
        return np.array([self.arc_index[(w, z)] for z, w in self.arcs], dtype=np.intp)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    @property
    def n_edges(self) -> int:
        return len(self.arcs) // 2

    def has_arc(self, z: str, w: str) -> bool:
        return (z, w) in self.arc_index

    def edges(self) -> list[Arc]:
        """Undirected edges, each as the arc with the lower-ordered source."""
        return [(z, w) for z, w in self.arcs if self.index[z] < self.index[w]]

    def distances_from(self, sources: Iterable[str]) -> dict[str, int]:
        dist = {}
        queue = deque()
        for s in sources:
            dist[s] = 0
            queue.append(s)
        while queue:
            z = queue.popleft()
            for w in self.out_neighbors[z]:
                if w not in dist:
                    dist[w] = dist[z] + 1
                    queue.append(w)
        return dist

    def distance(self, x: str, y: str) -> int:
        return self.distances_from([x])[y]

    def interior(self, margin: int = 2) -> frozenset[str]:
        """Vertices at graph distance >= ``margin`` from the truncation boundary."""
        if not self.boundary:
            return frozenset(self.vertices)
        dist = self.distances_from(sorted(self.boundary, key=self.index.__getitem__))
        return frozenset(v for v in self.vertices if dist.get(v, margin) >= margin)

    def check_walk(self, walk: "Walk") -> None:
        for a in walk.arcs:
            if a not in self.arc_index:
                raise GraphValidationError("not-a-walk", f"{a[0]}->{a[1]} is not an arc", a)


def build_graph(
    vertices: Sequence[str],
    arc_list: Iterable[Sequence[str]],
    *,
    symmetrize: bool = False,
    boundary: Iterable[str] = (),
) -> DirectedGraph:
    """Validate vertex/arc data and return a :class:`DirectedGraph`.

    Raises :class:`GraphValidationError` naming the offending vertex or arc
    when an identifier is duplicated or unknown, an arc is a loop, the arc set
    is not symmetric (unless ``symmetrize``), or the graph is disconnected.
    """
    verts = tuple(str(v) for v in vertices)
    index: dict[str, int] = {}
    for v in verts:
        if v in index:
            raise GraphValidationError("duplicate", f"duplicate vertex {v!r}", v)
        index[v] = len(index)

    arcs: set[Arc] = set()
    for raw in arc_list:
        if len(raw) != 2:
            raise GraphValidationError("not-a-walk", f"arc {raw!r} must be a pair", tuple(raw))
        z, w = str(raw[0]), str(raw[1])
        for v in (z, w):
            if v not in index:
                raise GraphValidationError("unknown-vertex", f"arc {z}->{w} references unknown vertex {v!r}", (z, w))
        if z == w:
            raise GraphValidationError("loop", f"loop at vertex {z!r}", (z, w))
        arcs.add((z, w))
        if symmetrize:
            arcs.add((w, z))

    for z, w in sorted(arcs, key=lambda a: (index[a[0]], index[a[1]])):
        if (w, z) not in arcs:
            raise GraphValidationError("asymmetric", f"arc {z}->{w} has no reverse {w}->{z}", (z, w))

    ordered = tuple(sorted(arcs, key=lambda a: (index[a[0]], index[a[1]])))
    degree = {v: 0 for v in verts}
    for z, _ in ordered:
        degree[z] += 1
    graph = DirectedGraph(
        vertices=verts,
        arcs=ordered,
        boundary=frozenset(str(b) for b in boundary),
        max_degree=max(degree.values(), default=0),
    )
    if not verts:
        raise GraphValidationError("disconnected", "graph has no vertices")
    reached = graph.distances_from([verts[0]])
    if len(reached) != len(verts):
        missing = next(v for v in verts if v not in reached)
        raise GraphValidationError("disconnected", f"vertex {missing!r} unreachable from {verts[0]!r}", missing)
    unknown = graph.boundary - set(verts)
    if unknown:
        raise GraphValidationError("unknown-vertex", f"boundary vertex {sorted(unknown)[0]!r} unknown", sorted(unknown)[0])
    return graph


# --------------------------------------------------------------------------- walks


@dataclass(frozen=True)
class Walk:
    """Walk given by its vertex sequence ``(x_0, ..., x_n)``.

    ``len(walk)`` is the number of steps ``n``.  A zero-step walk only comes
    out of :func:`tree_walk` for identical endpoints.
    """

    vertices: tuple[str, ...]

    def __post_init__(self):
        if not self.vertices:
            raise GraphValidationError("not-a-walk", "a walk needs a start vertex")

    @property
    def start(self) -> str:
        return self.vertices[0]

    @property
    def end(self) -> str:
        return self.vertices[-1]

    @property
    def arcs(self) -> tuple[Arc, ...]:
        v = self.vertices
        return tuple(zip(v[:-1], v[1:]))

    def __len__(self) -> int:
        return len(self.vertices) - 1

    def __add__(self, other: "Walk") -> "Walk":
        if self.end != other.start:
            raise GraphValidationError("not-a-walk", f"cannot join walk ending at {self.end!r} to one starting at {other.start!r}")
        return Walk(self.vertices + other.vertices[1:])

    def __str__(self) -> str:
        return "->".join(self.vertices)


@dataclass(frozen=True)
class ClosedWalk(Walk):
    def __post_init__(self):
        super().__post_init__()
        if len(self.vertices) < 2:
            raise GraphValidationError("not-a-walk", "a closed walk has at least one step")
        if self.vertices[0] != self.vertices[-1]:
            raise GraphValidationError("not-a-walk", f"walk {self} is not closed")


def walk_reverse(walk: Walk) -> Walk:
    cls = ClosedWalk if isinstance(walk, ClosedWalk) else Walk
    return cls(tuple(reversed(walk.vertices)))


def closed_walks(graph: DirectedGraph, max_length: int) -> Iterator[ClosedWalk]:
    """All closed walks of length 1..max_length, in deterministic order.

    Rotations of the same cycle are listed separately (they start elsewhere).
    """
    for start in graph.vertices:
        stack = [(start,)]
        while stack:
            path = stack.pop()
            if len(path) > 1 and path[-1] == start:
                yield ClosedWalk(path)
            if len(path) - 1 == max_length:
                continue
            for w in reversed(graph.out_neighbors[path[-1]]):
                stack.append(path + (w,))


# --------------------------------------------------------------------------- trees


@dataclass(frozen=True)
class SpanningTree:
    graph: DirectedGraph
    root: str
    parent: Mapping[str, str | None]
    depth: Mapping[str, int]

    @cached_property
    def arcs(self) -> frozenset[Arc]:
        out = set()
        for v, p in self.parent.items():
            if p is not None:
                out.add((p, v))
                out.add((v, p))
        return frozenset(out)

    def edges(self) -> list[Arc]:
        idx = self.graph.index
        return sorted({(a, b) if idx[a] < idx[b] else (b, a) for a, b in self.arcs}, key=lambda e: (idx[e[0]], idx[e[1]]))

    def contains(self, z: str, w: str) -> bool:
        return (z, w) in self.arcs


def spanning_tree(graph: DirectedGraph, root: str | None = None) -> SpanningTree:
    """Breadth-first spanning tree; neighbours are visited in vertex order."""
    root = graph.vertices[0] if root is None else root
    if root not in graph.index:
        raise GraphValidationError("unknown-vertex", f"root {root!r} is not a vertex", root)
    parent: dict[str, str | None] = {root: None}
    depth = {root: 0}
    queue = deque([root])
    while queue:
        z = queue.popleft()
        for w in graph.out_neighbors[z]:
            if w not in parent:
                parent[w] = z
                depth[w] = depth[z] + 1
                queue.append(w)
    return SpanningTree(graph=graph, root=root, parent=parent, depth=depth)


def tree_walk(tree: SpanningTree, source: str, target: str) -> Walk:
    """The unique simple walk from ``source`` to ``target`` along tree arcs."""
    up, down = [source], [target]
    a, b = source, target
    while tree.depth[a] > tree.depth[b]:
        a = tree.parent[a]
        up.append(a)
    while tree.depth[b] > tree.depth[a]:
        b = tree.parent[b]
        down.append(b)
    while a != b:
        a, b = tree.parent[a], tree.parent[b]
        up.append(a)
        down.append(b)
    return Walk(tuple(up) + tuple(reversed(down[:-1])))


@dataclass(frozen=True)
class CycleBasis:
    """T-basis ``C = C_0 ∪ E`` of the closed walks.

    ``edges`` holds one 2-walk ``x->y->x`` per arc (both orientations of every
    edge); ``fundamental`` holds one fundamental cycle per non-tree edge.
    """

    tree: SpanningTree
    edges: tuple[ClosedWalk, ...]
    fundamental: tuple[ClosedWalk, ...]

    @property
    def cycles(self) -> tuple[ClosedWalk, ...]:
        return self.fundamental + self.edges

    def __len__(self) -> int:
        return len(self.fundamental) + len(self.edges)


def fundamental_cycle(tree: SpanningTree, x: str, y: str) -> ClosedWalk:
    """``f_{x->y}``: the arc x->y followed by the tree walk back from y to x."""
    return ClosedWalk((x,) + tree_walk(tree, y, x).vertices)


def t_basis(graph: DirectedGraph, tree: SpanningTree) -> CycleBasis:
    if tree.graph is not graph and tree.graph != graph:
        raise GraphValidationError("not-a-walk", "tree was built on a different graph")
    edges = tuple(ClosedWalk((z, w, z)) for z, w in graph.arcs)
    # graph.edges() orients each edge from its lower-ordered endpoint
    fundamental = tuple(fundamental_cycle(tree, x, y) for x, y in graph.edges() if not tree.contains(x, y))
    return CycleBasis(tree=tree, edges=edges, fundamental=fundamental)


# --------------------------------------------------------------------------- arc functions


@dataclass(frozen=True, eq=False)
class ArcFunction:
    """Real values on the arcs of ``graph``, laid out in ``graph.arcs`` order."""

    graph: DirectedGraph
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.graph.n_arcs,):
            raise ValueError(f"expected {self.graph.n_arcs} arc values, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mapping(cls, graph: DirectedGraph, mapping: Mapping[Arc, float], default: float | None = None):
        vals = np.empty(graph.n_arcs)
        for i, a in enumerate(graph.arcs):
            if a in mapping:
                vals[i] = mapping[a]
            elif default is not None:
                vals[i] = default
            else:
                raise KeyError(f"no value for arc {a[0]}->{a[1]}")
        return cls(graph, vals)

    @classmethod
    def gradient_of(cls, graph: DirectedGraph, potential: Mapping[str, float]):
        psi = np.array([potential[v] for v in graph.vertices], dtype=float)
        return cls(graph, psi[graph.dst] - psi[graph.src])

    def __getitem__(self, arc: Arc) -> float:
        return float(self.values[self.graph.arc_index[arc]])


def walk_sum(ell: ArcFunction, walk: Walk) -> float:
    if not walk.arcs:
        return 0.0
    idx = ell.graph.arc_index
    try:
        positions = [idx[a] for a in walk.arcs]
    except KeyError as exc:
        raise GraphValidationError("not-a-walk", f"{exc.args[0]} is not an arc", exc.args[0]) from None
    return float(np.sum(ell.values[positions]))


def cycle_residual(ell: ArcFunction, basis: CycleBasis) -> tuple[float, ClosedWalk | None]:
    """Largest ``|walk_sum|`` over the basis and the walk attaining it."""
    worst, where = 0.0, None
    for c in basis.cycles:
        r = abs(walk_sum(ell, c))
        if r > worst or where is None:
            worst, where = r, c
    return worst, where


def is_gradient(ell: ArcFunction, basis: CycleBasis, tol: float = 1e-10) -> bool:
    return cycle_residual(ell, basis)[0] <= tol


def reconstruct_potential(ell: ArcFunction, graph: DirectedGraph, tagged_vertex: str, tol: float = 1e-8) -> dict[str, float]:
    """Potential ``psi`` with ``psi(tagged) = 0`` and ``ell = grad psi``.

    ``psi(x)`` is the sum of ``ell`` along the BFS tree walk from the tagged
    vertex.  Raises :class:`NotAGradientError` when some arc disagrees with the
    reconstructed gradient by more than ``tol``.
    """
    tree = spanning_tree(graph, tagged_vertex)
    psi = {tagged_vertex: 0.0}
    order = sorted(graph.vertices, key=lambda v: tree.depth[v])
    for v in order[1:]:
        p = tree.parent[v]
        psi[v] = psi[p] + ell[(p, v)]
    vec = np.array([psi[v] for v in graph.vertices])
    err = np.abs(vec[graph.dst] - vec[graph.src] - ell.values)
    worst = float(err.max(initial=0.0))
    if worst > tol:
        bad = graph.arcs[int(err.argmax())]
        raise NotAGradientError(f"arc {bad[0]}->{bad[1]} misses the reconstructed gradient by {worst:.3g}", worst)
    return {v: psi[v] for v in graph.vertices}


# --------------------------------------------------------------------------- files


def graph_to_dict(graph: DirectedGraph) -> dict:
    doc = {"vertices": list(graph.vertices), "arcs": [list(a) for a in graph.arcs]}
    if graph.boundary:
        doc["boundary"] = [v for v in graph.vertices if v in graph.boundary]
    return doc


def graph_from_dict(doc: Mapping) -> DirectedGraph:
    try:
        vertices = doc["vertices"]
        arcs = doc["arcs"]
    except KeyError as exc:
        raise GraphValidationError("not-a-walk", f"graph document lacks field {exc.args[0]!r}") from None
    return build_graph(vertices, arcs, symmetrize=bool(doc.get("symmetrize", False)), boundary=doc.get("boundary", ()))


def load_graph(path: str | Path) -> DirectedGraph:
    return graph_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
