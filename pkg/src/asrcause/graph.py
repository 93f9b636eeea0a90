"""Variables, datasets and the endpoint-mark graph shared by every stage."""

from __future__ import annotations

import enum
import heapq
import json
import re
from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

OUTCOME_SUFFIX = "_value"


class GraphError(ValueError):
    pass


class Kind(str, enum.Enum):
    CATEGORICAL = "categorical"
    ORDINAL = "ordinal"
    NUMERIC_OUTCOME = "numeric-outcome"


class Role(str, enum.Enum):
    PHYSIOLOGICAL = "physiological"
    COGNITIVE = "cognitive"
    EXTRINSIC = "extrinsic"
    ERROR = "error"


class Mark(str, enum.Enum):
    TAIL = "tail"
    ARROW = "arrow"
    CIRCLE = "circle"


def outcome_column(node: str) -> str:
    """Name of the numeric column holding the raw values of outcome ``node``."""
    return node + OUTCOME_SUFFIX


def outcome_node(column: str) -> str:
    if not column.endswith(OUTCOME_SUFFIX):
        raise ValueError(f"{column!r} is not a numeric outcome column")
    return column[: -len(OUTCOME_SUFFIX)]


@dataclass(frozen=True)
class VariableSchema:
    name: str
    kind: Kind
    levels: tuple[str, ...] = ()
    role: Role = Role.EXTRINSIC

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "levels", tuple(str(lv) for lv in self.levels))
        if not self.name:
            raise ValueError("variable name must be non-empty")
        if self.kind is Kind.NUMERIC_OUTCOME:
            if self.levels:
                raise ValueError(f"numeric outcome {self.name!r} cannot have levels")
        else:
            if len(self.levels) < 2:
                raise ValueError(f"variable {self.name!r} needs at least 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"variable {self.name!r} has duplicate level labels")

    @property
    def discrete(self) -> bool:
        return self.kind is not Kind.NUMERIC_OUTCOME

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def index(self, level) -> int:
        """Level index of ``level`` (a label or an integer index)."""
        if isinstance(level, (int, np.integer)) and not isinstance(level, bool):
            if not 0 <= level < len(self.levels):
                raise ValueError(f"level index {level} out of range for {self.name!r}")
            return int(level)
        try:
            return self.levels.index(str(level))
        except ValueError:
            raise ValueError(
                f"{level!r} is not a level of {self.name!r} (levels: {list(self.levels)})"
            ) from None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "levels": list(self.levels),
            "role": self.role.value,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "VariableSchema":
        return cls(obj["name"], obj["kind"], tuple(obj.get("levels", ())), obj.get("role", "extrinsic"))


class DiscreteDataset:
    """Column-oriented table of discrete variables and numeric outcomes.

    Discrete columns hold level indices (``int64``), numeric outcome columns hold
    floats. Columns are read-only views; the dataset never mutates after
    construction.
    """

    def __init__(self, schema: Sequence[VariableSchema], columns: Mapping[str, Iterable]):
        schema = tuple(schema)
        names = [s.name for s in schema]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names in schema")
        if set(columns) != set(names):
            missing = sorted(set(names) - set(columns))
            extra = sorted(set(columns) - set(names))
            raise ValueError(f"columns do not match schema (missing={missing}, extra={extra})")
        cols = {}
        n_rows = None
        for var in schema:
            if var.discrete:
                col = np.asarray(columns[var.name], dtype=np.int64)
            else:
                col = np.asarray(columns[var.name], dtype=float)
            if col.ndim != 1:
                raise ValueError(f"column {var.name!r} must be one-dimensional")
            if n_rows is None:
                n_rows = len(col)
            elif len(col) != n_rows:
                raise ValueError(
                    f"column {var.name!r} has {len(col)} rows, expected {n_rows}"
                )
            if var.discrete and len(col) and (col.min() < 0 or col.max() >= var.n_levels):
                raise ValueError(f"column {var.name!r} has level indices outside 0..{var.n_levels - 1}")
            col = col.copy()
            col.flags.writeable = False
            cols[var.name] = col
        self.schema = schema
        self._by_name = {s.name: s for s in schema}
        self._columns = cols
        self.n_rows = 0 if n_rows is None else n_rows

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.schema)

    @property
    def discrete_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.schema if s.discrete)

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return self.n_rows

    def variable(self, name: str) -> VariableSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        self.variable(name)
        return self._columns[name]

    def select(self, names: Iterable[str]) -> "DiscreteDataset":
        names = list(names)
        return DiscreteDataset([self.variable(n) for n in names], {n: self._columns[n] for n in names})

    def take(self, rows) -> "DiscreteDataset":
        rows = np.asarray(rows)
        return DiscreteDataset(self.schema, {n: c[rows] for n, c in self._columns.items()})

    def with_columns(self, schema: Sequence[VariableSchema], columns: Mapping) -> "DiscreteDataset":
        """Return a new dataset with extra (or replaced) columns appended."""
        new = {s.name: s for s in schema}
        out_schema = [new.pop(s.name, s) for s in self.schema] + list(new.values())
        cols = {s.name: self._columns[s.name] for s in self.schema}
        cols.update(columns)
        return DiscreteDataset(out_schema, cols)

    def labels(self, name: str) -> list[str]:
        var = self.variable(name)
        col = self._columns[name]
        if not var.discrete:
            raise ValueError(f"{name!r} is a numeric outcome and has no level labels")
        return [var.levels[i] for i in col]

    def __eq__(self, other):
        if not isinstance(other, DiscreteDataset):
            return NotImplemented
        return self.schema == other.schema and all(
            np.array_equal(self._columns[n], other._columns[n]) for n in self.names
        )

    def __repr__(self):
        return f"DiscreteDataset(n_rows={self.n_rows}, variables={list(self.names)})"


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


class MixedGraph:
    """Graph whose edges carry a mark at each endpoint.

    The same type represents an undirected skeleton (tail-tail), a DAG
    (tail-arrow), a CPDAG (both) and a PAG (any marks, including circles).
    Instances are immutable; ``edges`` maps the lexicographically ordered
    pair ``(a, b)`` to ``(mark_at_a, mark_at_b)``.
    """

    __slots__ = ("nodes", "edges", "_adj")

    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple] = ()):
        nodes = tuple(sorted(set(nodes)))
        node_set = set(nodes)
        out = {}
        for edge in edges:
            a, b, ma, mb = edge
            if a == b:
                raise GraphError(f"self-edge on {a!r}")
            for n in (a, b):
                if n not in node_set:
                    raise GraphError(f"edge references unknown node {n!r}")
            key = _pair(a, b)
            if key in out:
                raise GraphError(f"more than one edge between {key[0]!r} and {key[1]!r}")
            ma, mb = Mark(ma), Mark(mb)
            out[key] = (ma, mb) if a < b else (mb, ma)
        adj = {n: set() for n in nodes}
        for a, b in out:
            adj[a].add(b)
            adj[b].add(a)
        self.nodes = nodes
        self.edges = MappingProxyType(dict(sorted(out.items())))
        self._adj = {n: tuple(sorted(v)) for n, v in adj.items()}

    def __reduce__(self):
        return (MixedGraph, (self.nodes, [(a, b, ma.value, mb.value) for (a, b), (ma, mb) in self.edges.items()]))

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    # construction helpers

    @classmethod
    def from_directed(cls, nodes, pairs) -> "MixedGraph":
        return cls(nodes, [(a, b, Mark.TAIL, Mark.ARROW) for a, b in pairs])

    @classmethod
    def from_undirected(cls, nodes, pairs) -> "MixedGraph":
        return cls(nodes, [(a, b, Mark.TAIL, Mark.TAIL) for a, b in pairs])

    @classmethod
    def complete(cls, nodes, mark: Mark = Mark.TAIL) -> "MixedGraph":
        nodes = sorted(set(nodes))
        return cls(
            nodes,
            [(a, b, mark, mark) for i, a in enumerate(nodes) for b in nodes[i + 1:]],
        )

    @classmethod
    def from_marks(cls, nodes, marks: Mapping[tuple[str, str], Mark]) -> "MixedGraph":
        """Build from ``{(u, v): mark at v}``; both directions must be present."""
        edges = []
        for (u, v), m in marks.items():
            if u < v:
                edges.append((u, v, marks[(v, u)], m))
        return cls(nodes, edges)

    def to_marks(self) -> dict[tuple[str, str], Mark]:
        out = {}
        for (a, b), (ma, mb) in self.edges.items():
            out[(a, b)] = mb
            out[(b, a)] = ma
        return out

    # queries

    def _check(self, node):
        if node not in self._adj:
            raise GraphError(f"unknown node {node!r}")

    def adjacent(self, node: str) -> tuple[str, ...]:
        self._check(node)
        return self._adj[node]

    def is_adjacent(self, a: str, b: str) -> bool:
        return _pair(a, b) in self.edges

    def mark(self, u: str, v: str) -> Mark | None:
        """Mark at ``v`` on the edge between ``u`` and ``v`` (None if absent)."""
        key = _pair(u, v)
        if key not in self.edges:
            return None
        ma, mb = self.edges[key]
        return mb if key[1] == v else ma

    def is_directed(self, u: str, v: str) -> bool:
        """True for ``u -> v``."""
        return self.mark(v, u) is Mark.TAIL and self.mark(u, v) is Mark.ARROW

    def is_undirected(self, u: str, v: str) -> bool:
        return self.mark(v, u) is Mark.TAIL and self.mark(u, v) is Mark.TAIL

    def children(self, node: str) -> set[str]:
        return {v for v in self.adjacent(node) if self.is_directed(node, v)}

    def directed_edges(self) -> list[tuple[str, str]]:
        out = []
        for (a, b), (ma, mb) in self.edges.items():
            if ma is Mark.TAIL and mb is Mark.ARROW:
                out.append((a, b))
            elif ma is Mark.ARROW and mb is Mark.TAIL:
                out.append((b, a))
        return sorted(out)

    def skeleton(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.edges)

    def is_fully_directed(self) -> bool:
        return len(self.directed_edges()) == len(self.edges)

    def is_cpdag_marks(self) -> bool:
        return all(
            {ma, mb} <= {Mark.TAIL, Mark.ARROW} and (ma, mb) != (Mark.ARROW, Mark.ARROW)
            for ma, mb in self.edges.values()
        )

    def has_directed_cycle(self) -> bool:
        return topological_order(self, strict=False) is None

    def is_dag(self) -> bool:
        return self.is_fully_directed() and not self.has_directed_cycle()

    # derived graphs

    def with_edge(self, a, b, mark_a, mark_b) -> "MixedGraph":
        marks = self.to_marks()
        marks[(b, a)] = Mark(mark_a)
        marks[(a, b)] = Mark(mark_b)
        return MixedGraph.from_marks(self.nodes, marks)

    def without_edge(self, a, b) -> "MixedGraph":
        key = _pair(a, b)
        return MixedGraph(self.nodes, [(x, y, mx, my) for (x, y), (mx, my) in self.edges.items() if (x, y) != key])

    def subgraph(self, nodes: Iterable[str]) -> "MixedGraph":
        keep = set(nodes)
        return MixedGraph(
            keep,
            [(a, b, ma, mb) for (a, b), (ma, mb) in self.edges.items() if a in keep and b in keep],
        )

    # serialisation

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [
                {"a": a, "b": b, "mark_a": ma.value, "mark_b": mb.value}
                for (a, b), (ma, mb) in self.edges.items()
            ],
        }

    @classmethod
    def from_json(cls, obj) -> "MixedGraph":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            edges = [(e["a"], e["b"], e["mark_a"], e["mark_b"]) for e in obj["edges"]]
            return cls(obj["nodes"], edges)
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph JSON: {exc}") from None

    def __eq__(self, other):
        if not isinstance(other, MixedGraph):
            return NotImplemented
        return self.nodes == other.nodes and dict(self.edges) == dict(other.edges)

    def __hash__(self):
        return hash((self.nodes, tuple(self.edges.items())))

    def __repr__(self):
        parts = []
        for (a, b), (ma, mb) in self.edges.items():
            left = {Mark.TAIL: "-", Mark.ARROW: "<", Mark.CIRCLE: "o"}[ma]
            right = {Mark.TAIL: "-", Mark.ARROW: ">", Mark.CIRCLE: "o"}[mb]
            parts.append(f"{a} {left}-{right} {b}")
        return f"MixedGraph(nodes={list(self.nodes)}, edges=[{', '.join(parts)}])"


def topological_order(graph: MixedGraph, strict: bool = True) -> list[str] | None:
    """Kahn ordering of the directed part, ties broken lexicographically.

    Returns None (or raises when ``strict``) if the directed part has a cycle.
    """
    indeg = {n: 0 for n in graph.nodes}
    out = {n: [] for n in graph.nodes}
    for a, b in graph.directed_edges():
        indeg[b] += 1
        out[a].append(b)
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in out[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != len(graph.nodes):
        if strict:
            cyc = sorted(n for n, d in indeg.items() if d > 0)
            raise GraphError(f"directed cycle among {cyc}")
        return None
    return order


def parents(graph: MixedGraph, node: str) -> set[str]:
    return {u for u in graph.adjacent(node) if graph.is_directed(u, node)}


def descendants(graph: MixedGraph, node: str) -> set[str]:
    graph.adjacent(node)
    seen = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        for c in graph.children(cur):
            if c not in seen and c != node:
                seen.add(c)
                stack.append(c)
    return seen


def ancestors(graph: MixedGraph, node: str) -> set[str]:
    graph.adjacent(node)
    seen = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        for p in parents(graph, cur):
            if p not in seen and p != node:
                seen.add(p)
                stack.append(p)
    return seen


def has_directed_path(graph: MixedGraph, src: str, dst: str) -> bool:
    return dst in descendants(graph, src)


def d_separated(graph: MixedGraph, x: str, y: str, z: Iterable[str] = ()) -> bool:
    """Reachability (Bayes-ball) test of whether ``z`` d-separates ``x`` and ``y``."""
    z = set(z)
    for n in (x, y, *z):
        graph.adjacent(n)
    if x == y:
        raise GraphError("x and y must differ")
    if x in z or y in z:
        raise GraphError("conditioning set must exclude x and y")
    if not graph.is_fully_directed():
        raise GraphError("d-separation needs a fully directed graph")
    topological_order(graph)

    # nodes that are in z or have a descendant in z
    opened = set()
    stack = list(z)
    while stack:
        n = stack.pop()
        if n not in opened:
            opened.add(n)
            stack.extend(parents(graph, n))

    # state: (node, arrived_from_child) ; "up" means travelling against edges
    visited = set()
    queue = deque([(x, True)])
    while queue:
        node, up = queue.popleft()
        if (node, up) in visited:
            continue
        visited.add((node, up))
        if node == y:
            return False
        if up and node not in z:
            for p in parents(graph, node):
                queue.append((p, True))
            for c in graph.children(node):
                queue.append((c, False))
        elif not up:
            if node not in z:
                for c in graph.children(node):
                    queue.append((c, False))
            if node in opened:
                for p in parents(graph, node):
                    queue.append((p, True))
    return True


_DOT_ID = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_DOT_ARROW = {Mark.TAIL: "none", Mark.ARROW: "normal", Mark.CIRCLE: "odot"}


def _dot_id(name: str) -> str:
    if _DOT_ID.match(name):
        return name
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: MixedGraph, name: str | None = None, comment: str | None = None) -> str:
    """Render as DOT with lexicographic node and edge order."""
    lines = []
    if comment:
        lines.extend("// " + ln for ln in comment.splitlines())
    lines.append("digraph {" if name is None else f"digraph {_dot_id(name)} {{")
    for n in graph.nodes:
        lines.append(f"  {_dot_id(n)};")
    for (a, b), (ma, mb) in graph.edges.items():
        ia, ib = _dot_id(a), _dot_id(b)
        if ma is Mark.TAIL and mb is Mark.ARROW:
            lines.append(f"  {ia} -> {ib};")
        elif ma is Mark.ARROW and mb is Mark.TAIL:
            lines.append(f"  {ib} -> {ia};")
        elif ma is Mark.TAIL and mb is Mark.TAIL:
            lines.append(f"  {ia} -> {ib} [dir=none];")
        else:
            attrs = ["dir=both", f"arrowtail={_DOT_ARROW[ma]}", f"arrowhead={_DOT_ARROW[mb]}"]
            if ma is Mark.CIRCLE:
                attrs.append('taillabel="o"')
            if mb is Mark.CIRCLE:
                attrs.append('headlabel="o"')
            lines.append(f"  {ia} -> {ib} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class SepsetMap:
    """Separating sets keyed by unordered node pair."""

    _sets: dict = field(default_factory=dict)

    def set(self, x: str, y: str, s: Iterable[str]) -> None:
        s = frozenset(s)
        if x in s or y in s:
            raise ValueError("a separating set cannot contain its endpoints")
        self._sets[frozenset((x, y))] = s

    def get(self, x: str, y: str) -> frozenset | None:
        return self._sets.get(frozenset((x, y)))

    def __contains__(self, pair) -> bool:
        return frozenset(pair) in self._sets

    def __len__(self) -> int:
        return len(self._sets)

    def items(self):
        for pair in sorted(self._sets, key=lambda p: tuple(sorted(p))):
            yield tuple(sorted(pair)), self._sets[pair]

    def copy(self) -> "SepsetMap":
        return SepsetMap(dict(self._sets))

    def to_json(self) -> list:
        return [{"x": a, "y": b, "sepset": sorted(s)} for (a, b), s in self.items()]
