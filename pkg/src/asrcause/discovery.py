"""Constraint-based structure discovery: PC (CPDAG) and FCI (PAG)."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

from sklearn.base import BaseEstimator

from .citest import CiTestConfig, ci_test
from .graph import (
    DiscreteDataset,
    GraphError,
    Kind,
    Mark,
    MixedGraph,
    SepsetMap,
    d_separated,
    outcome_node,
    topological_order,
)
from .validation import check_dataset

logger = logging.getLogger(__name__)

ALGORITHMS = ("pc", "fci")


@dataclass(frozen=True)
class DiscoveryConfig:
    algorithm: str = "pc"
    ci: CiTestConfig = field(default_factory=CiTestConfig)
    max_cond_set: int | None = 3
    oracle: MixedGraph | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.max_cond_set is not None and self.max_cond_set < 0:
            raise ValueError("max_cond_set must be >= 0")
        if self.oracle is not None and not self.oracle.is_dag():
            raise ValueError("oracle must be a DAG")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")


@dataclass
class DiscoveryOutput:
    graph: MixedGraph
    sepsets: SepsetMap
    log: list = field(default_factory=list)


class _Tester:
    """Memoised independence decisions from data or a d-separation oracle."""

    def __init__(self, data: DiscreteDataset | None, config: DiscoveryConfig):
        self.data = data
        self.config = config
        self._cache: dict = {}

    def __call__(self, x: str, y: str, s: tuple[str, ...]) -> tuple[bool, float | None]:
        key = (min(x, y), max(x, y), tuple(sorted(s)))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.config.oracle is not None:
            out = (d_separated(self.config.oracle, x, y, s), None)
        else:
            res = ci_test(self.data, x, y, s, self.config.ci)
            out = (res.independent, res.p_value)
        self._cache[key] = out
        return out


def discovery_nodes(data: DiscreteDataset | None, config: DiscoveryConfig) -> tuple[str, ...]:
    """Variables that take part in discovery.

    Numeric outcome columns are skipped when their binned twin is present;
    otherwise they are rejected because CI tests need discrete levels.
    """
    if data is None:
        if config.oracle is None:
            raise ValueError("discovery needs either data or an oracle DAG")
        return config.oracle.nodes
    names = set(data.discrete_names)
    for var in data.schema:
        if var.kind is Kind.NUMERIC_OUTCOME:
            try:
                twin = outcome_node(var.name)
            except ValueError:
                twin = None
            if twin not in names:
                raise ValueError(
                    f"numeric outcome column {var.name!r} has no binned counterpart; "
                    "bin it first (asrcause.features.bin_outcomes)"
                )
    if config.oracle is not None and set(config.oracle.nodes) != names:
        raise ValueError("oracle DAG nodes differ from the dataset's discrete variables")
    if len(names) < 2:
        raise ValueError("discovery needs at least two discrete variables")
    return tuple(sorted(names))


def _remove_event(x, y, s, p, stage="skeleton"):
    return {"event": "remove", "x": x, "y": y, "sepset": sorted(s), "p": p, "stage": stage}


def _first_separator(test, x, y, candidates, d):
    for s in combinations(candidates, d):
        indep, p = test(x, y, s)
        if indep:
            return s, p
    return None


def pc_skeleton(
    data: DiscreteDataset | None,
    config: DiscoveryConfig | None = None,
    log: list | None = None,
    _tester: Callable | None = None,
) -> tuple[MixedGraph, SepsetMap]:
    """Order-independent (PC-stable) skeleton search.

    Adjacency sets are frozen at the start of each conditioning-set size, so
    the result does not depend on the order of the input variables.
    """
    config = config or DiscoveryConfig()
    nodes = discovery_nodes(data, config)
    test = _tester or _Tester(data, config)
    adj = {n: set(nodes) - {n} for n in nodes}
    sepsets = SepsetMap()
    log = log if log is not None else []

    d = 0
    while config.max_cond_set is None or d <= config.max_cond_set:
        frozen = {n: tuple(sorted(a)) for n, a in adj.items()}
        pairs = [(x, y) for x in nodes for y in frozen[x] if len(frozen[x]) - 1 >= d]
        if not pairs:
            break

        def candidates(x, y):
            return tuple(v for v in frozen[x] if v != y)

        if config.n_jobs > 1:
            with ThreadPoolExecutor(config.n_jobs) as pool:
                found = list(pool.map(lambda xy: _first_separator(test, *xy, candidates(*xy), d), pairs))
        else:
            found = None
        for i, (x, y) in enumerate(pairs):
            if y not in adj[x]:
                continue
            hit = found[i] if found is not None else _first_separator(test, x, y, candidates(x, y), d)
            if hit is not None:
                s, p = hit
                adj[x].discard(y)
                adj[y].discard(x)
                sepsets.set(x, y, s)
                log.append(_remove_event(x, y, s, p))
        d += 1

    graph = MixedGraph.from_undirected(nodes, [(x, y) for x in nodes for y in adj[x] if x < y])
    return graph, sepsets


def _unshielded_colliders(graph: MixedGraph, sepsets: SepsetMap):
    for z in graph.nodes:
        for x, y in combinations(graph.adjacent(z), 2):
            if graph.is_adjacent(x, y):
                continue
            sep = sepsets.get(x, y)
            if sep is None:
                raise GraphError(f"no separating set recorded for nonadjacent pair ({x}, {y})")
            if z not in sep:
                yield x, z, y


def orient_v_structures(
    skeleton: MixedGraph, sepsets: SepsetMap, log: list | None = None
) -> MixedGraph:
    """Orient every unshielded triple ``x - z - y`` with ``z`` outside sepset(x, y) as a collider.

    An edge that two collider decisions want to point both ways is left
    undirected and a ``conflict`` event is logged.
    """
    log = log if log is not None else []
    wanted = set()
    for x, z, y in _unshielded_colliders(skeleton, sepsets):
        wanted.add((x, z))
        wanted.add((y, z))
        log.append({"event": "orient", "rule": "v-structure", "x": x, "z": z, "y": y})
    marks = skeleton.to_marks()
    for a, b in skeleton.edges:
        ab, ba = (a, b) in wanted, (b, a) in wanted
        if ab and ba:
            logger.warning("conflicting v-structures on %s - %s; left undirected", a, b)
            log.append({"event": "conflict", "x": a, "y": b})
        elif ab:
            marks[(a, b)], marks[(b, a)] = Mark.ARROW, Mark.TAIL
        elif ba:
            marks[(b, a)], marks[(a, b)] = Mark.ARROW, Mark.TAIL
    return MixedGraph.from_marks(skeleton.nodes, marks)


def _directed(m, u, v):
    return m.get((u, v)) is Mark.ARROW and m.get((v, u)) is Mark.TAIL


def _undirected(m, u, v):
    return m.get((u, v)) is Mark.TAIL and m.get((v, u)) is Mark.TAIL


def _meek_rule(m, adj, u, v) -> str | None:
    """Name of the first Meek rule forcing ``u -> v`` on the undirected edge u - v."""
    for w in adj[u]:
        if w != v and _directed(m, w, u) and w not in adj[v]:
            return "R1"
    for w in adj[u]:
        if w != v and _directed(m, u, w) and _directed(m, w, v):
            return "R2"
    ws = [w for w in adj[u] if w != v and _undirected(m, u, w) and _directed(m, w, v)]
    for w1, w2 in combinations(ws, 2):
        if w2 not in adj[w1]:
            return "R3"
    for w in adj[u]:
        if w == v or not _undirected(m, u, w) or w in adj[v]:
            continue
        for c in adj[w]:
            if c not in (u, v) and c in adj[u] and _directed(m, w, c) and _directed(m, c, v):
                return "R4"
    return None


def meek_closure(graph: MixedGraph, log: list | None = None) -> MixedGraph:
    """Apply Meek's rules R1-R4 until no undirected edge can be oriented."""
    if not graph.is_cpdag_marks():
        raise GraphError("meek_closure expects only directed and undirected edges")
    topological_order(graph)
    log = log if log is not None else []
    m = graph.to_marks()
    adj = {n: set(graph.adjacent(n)) for n in graph.nodes}
    changed = True
    while changed:
        changed = False
        for a, b in graph.edges:
            if not _undirected(m, a, b):
                continue
            for u, v in ((a, b), (b, a)):
                rule = _meek_rule(m, adj, u, v)
                if rule is not None:
                    m[(u, v)], m[(v, u)] = Mark.ARROW, Mark.TAIL
                    log.append({"event": "orient", "rule": rule, "x": u, "y": v})
                    changed = True
                    break
    return MixedGraph.from_marks(graph.nodes, m)


def pc(data: DiscreteDataset | None, config: DiscoveryConfig | None = None) -> DiscoveryOutput:
    config = config or DiscoveryConfig()
    log: list = []
    skel, sepsets = pc_skeleton(data, config, log)
    graph = meek_closure(orient_v_structures(skel, sepsets, log), log)
    return DiscoveryOutput(graph, sepsets, log)


# FCI


def possible_d_sep(graph: MixedGraph, x: str) -> set[str]:
    """Nodes reachable from ``x`` along paths whose every inner triple is a collider or a triangle."""
    m = graph.to_marks()
    seen = set()
    frontier = [(x, n) for n in graph.adjacent(x)]
    out = set()
    while frontier:
        a, b = frontier.pop()
        if (a, b) in seen:
            continue
        seen.add((a, b))
        out.add(b)
        for c in graph.adjacent(b):
            if c == a or c == x:
                continue
            collider = m[(a, b)] is Mark.ARROW and m[(c, b)] is Mark.ARROW
            if collider or graph.is_adjacent(a, c):
                frontier.append((b, c))
    out.discard(x)
    return out


def _r0(graph: MixedGraph, sepsets: SepsetMap, log) -> dict:
    m = graph.to_marks()
    for x, z, y in _unshielded_colliders(graph, sepsets):
        m[(x, z)] = Mark.ARROW
        m[(y, z)] = Mark.ARROW
        log.append({"event": "orient", "rule": "R0", "x": x, "z": z, "y": y})
    return m


def _discriminating_start(m, adj, alpha, beta, gamma):
    """Return theta if a discriminating path theta ... alpha beta gamma for beta exists."""
    visited = {alpha, beta, gamma}
    frontier = [alpha]
    while frontier:
        nxt = []
        for c in frontier:
            for w in sorted(adj[c]):
                if w in visited or m.get((w, c)) is not Mark.ARROW:
                    continue
                if w not in adj[gamma]:
                    return w
                if _directed(m, w, gamma) and m.get((c, w)) is Mark.ARROW:
                    visited.add(w)
                    nxt.append(w)
        frontier = nxt
    return None


def _fci_rules(m, adj, sepsets, log) -> bool:
    nodes = sorted(adj)
    A, C, T = Mark.ARROW, Mark.CIRCLE, Mark.TAIL
    changed = False
    for b in nodes:
        for a in sorted(adj[b]):
            for c in sorted(adj[b]):
                if a == c:
                    continue
                # R1: a *-> b o-* c, a and c nonadjacent  =>  b -> c
                if m[(a, b)] is A and m[(c, b)] is C and c not in adj[a]:
                    m[(c, b)], m[(b, c)] = T, A
                    log.append({"event": "orient", "rule": "R1", "x": b, "y": c})
                    changed = True
                # R2: a -> b *-> c or a *-> b -> c, with a *-o c  =>  a *-> c
                if c in adj[a] and m[(a, c)] is C:
                    if (_directed(m, a, b) and m[(b, c)] is A) or (m[(a, b)] is A and _directed(m, b, c)):
                        m[(a, c)] = A
                        log.append({"event": "orient", "rule": "R2", "x": a, "y": c})
                        changed = True
    for b in nodes:
        # R3: a *-> b <-* c, a *-o t o-* c, a and c nonadjacent, t *-o b  =>  t *-> b
        into_b = [a for a in sorted(adj[b]) if m[(a, b)] is A]
        for a, c in combinations(into_b, 2):
            if c in adj[a]:
                continue
            for t in sorted(adj[b] & adj[a] & adj[c]):
                if m[(a, t)] is C and m[(c, t)] is C and m[(t, b)] is C:
                    m[(t, b)] = A
                    log.append({"event": "orient", "rule": "R3", "x": t, "y": b})
                    changed = True
    for gamma in nodes:
        # R4: discriminating path theta ... alpha beta gamma with beta o-* gamma
        for beta in sorted(adj[gamma]):
            if m[(gamma, beta)] is not C:
                continue
            for alpha in sorted(adj[beta] & adj[gamma]):
                if m[(beta, alpha)] is not A or not _directed(m, alpha, gamma):
                    continue
                theta = _discriminating_start(m, adj, alpha, beta, gamma)
                if theta is None:
                    continue
                sep = sepsets.get(theta, gamma) or frozenset()
                if beta in sep:
                    m[(gamma, beta)], m[(beta, gamma)] = T, A
                else:
                    m[(alpha, beta)], m[(gamma, beta)], m[(beta, gamma)] = A, A, A
                log.append({"event": "orient", "rule": "R4", "x": beta, "y": gamma, "theta": theta})
                changed = True
                break
    return changed


def fci(data: DiscreteDataset | None, config: DiscoveryConfig | None = None) -> DiscoveryOutput:
    """FCI with Possible-D-Sep pruning and orientation rules R0-R4.

    The selection-bias rules (R5-R10) are not applied.
    """
    config = config or DiscoveryConfig(algorithm="fci")
    test = _Tester(data, config)
    log: list = []
    skel, sepsets = pc_skeleton(data, config, log, _tester=test)

    pag = MixedGraph(skel.nodes, [(a, b, Mark.CIRCLE, Mark.CIRCLE) for a, b in skel.edges])
    pag = MixedGraph.from_marks(pag.nodes, _r0(pag, sepsets, []))

    pds = {n: possible_d_sep(pag, n) for n in pag.nodes}
    adj = {n: set(pag.adjacent(n)) for n in pag.nodes}
    cap = config.max_cond_set
    for x, y in list(pag.edges):
        if y not in adj[x]:
            continue
        for src in (x, y):
            pool = tuple(sorted(pds[src] - {x, y}))
            sizes = range(0, len(pool) + 1 if cap is None else min(cap, len(pool)) + 1)
            hit = None
            for d in sizes:
                hit = _first_separator(test, x, y, pool, d)
                if hit is not None:
                    break
            if hit is not None:
                s, p = hit
                adj[x].discard(y)
                adj[y].discard(x)
                sepsets.set(x, y, s)
                log.append(_remove_event(x, y, s, p, stage="possible-d-sep"))
                break

    pag = MixedGraph(pag.nodes, [(a, b, Mark.CIRCLE, Mark.CIRCLE) for a, b in pag.edges if b in adj[a]])
    m = _r0(pag, sepsets, log)
    while _fci_rules(m, adj, sepsets, log):
        pass
    return DiscoveryOutput(MixedGraph.from_marks(pag.nodes, m), sepsets, log)


def discover(data: DiscreteDataset | None, config: DiscoveryConfig | None = None) -> DiscoveryOutput:
    config = config or DiscoveryConfig()
    return pc(data, config) if config.algorithm == "pc" else fci(data, config)


class PC(BaseEstimator):
    """PC-stable structure search as an estimator.

    ``fit`` stores the CPDAG in ``graph_``, separating sets in ``sepsets_``
    and the removal / orientation events in ``log_``. With ``oracle`` set the
    statistical tests are replaced by d-separation in that DAG and ``X`` may
    be None.
    """

    _algorithm = "pc"

    def __init__(self, test="g2", alpha=0.05, min_samples_per_df=10.0, max_cond_set=3, oracle=None, n_jobs=1):
        self.test = test
        self.alpha = alpha
        self.min_samples_per_df = min_samples_per_df
        self.max_cond_set = max_cond_set
        self.oracle = oracle
        self.n_jobs = n_jobs

    def config(self) -> DiscoveryConfig:
        ci = CiTestConfig(self.test, self.alpha, self.min_samples_per_df)
        return DiscoveryConfig(self._algorithm, ci, self.max_cond_set, self.oracle, self.n_jobs)

    def fit(self, X=None, y=None):
        config = self.config()
        data = None if X is None else check_dataset(X)
        if data is None and self.oracle is None:
            raise ValueError("data is required unless an oracle DAG is given")
        out = discover(data, config)
        self.graph_ = out.graph
        self.sepsets_ = out.sepsets
        self.log_ = out.log
        return self


class FCI(PC):
    """FCI search (R0-R4 with Possible-D-Sep pruning); ``graph_`` is a PAG."""

    _algorithm = "fci"
