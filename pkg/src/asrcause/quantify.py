"""Bayesian-network fitting and interventional (do-operator) effects."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import (
    DiscreteDataset,
    GraphError,
    Kind,
    Mark,
    MixedGraph,
    Role,
    descendants,
    has_directed_path,
    outcome_column,
    parents,
    topological_order,
)
from .validation import check_dataset

logger = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 10**7
REPORT_CAUSES = ("Age", "Gender", "GoP", "SNR", "NumWords")
REPORT_EFFECTS = ("Subs", "Del", "Ins")
CONTRASTS = ("extreme", "adjacent")


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteFactor:
    levels: tuple[str, ...]
    parents: tuple[str, ...]
    table: np.ndarray  # (n_parent_configs, n_levels)
    counts: np.ndarray


@dataclass(frozen=True)
class OutcomeTable:
    parents: tuple[str, ...]
    means: np.ndarray  # (n_parent_configs,)
    counts: np.ndarray
    fallback: np.ndarray  # True where the cell had no rows and uses the global mean
    global_mean: float


@dataclass(frozen=True)
class FittedNetwork:
    dag: MixedGraph
    cpts: Mapping[str, DiscreteFactor]
    outcome_means: Mapping[str, OutcomeTable]
    smoothing: float = 1.0

    @property
    def order(self) -> list[str]:
        return topological_order(self.dag)

    def levels(self, node: str) -> tuple[str, ...]:
        if node in self.cpts:
            return self.cpts[node].levels
        if node in self.outcome_means:
            raise InferenceError(f"{node!r} is a numeric outcome and has no levels")
        raise InferenceError(f"unknown node {node!r}")

    def level_index(self, node: str, level) -> int:
        levels = self.levels(node)
        if isinstance(level, (int, np.integer)) and not isinstance(level, bool):
            if not 0 <= level < len(levels):
                raise InferenceError(f"level index {level} out of range for {node!r}")
            return int(level)
        if str(level) not in levels:
            raise InferenceError(f"{level!r} is not a level of {node!r} (levels: {list(levels)})")
        return levels.index(str(level))


@dataclass(frozen=True)
class InterventionQuery:
    target: str
    do_node: str
    do_value: str | int


def _config_index(data: DiscreteDataset, pa: Sequence[str]) -> tuple[np.ndarray, int]:
    idx = np.zeros(data.n_rows, dtype=np.int64)
    n = 1
    for p in pa:
        k = data.variable(p).n_levels
        idx = idx * k + data.column(p)
        n *= k
    return idx, n


def _check_dag(dag: MixedGraph) -> None:
    if not dag.is_fully_directed():
        undirected = [e for e in dag.edges if e not in {tuple(sorted(d)) for d in dag.directed_edges()}]
        raise GraphError(
            f"graph has {len(undirected)} edge(s) that are not directed (e.g. {undirected[0]}); "
            "resolve the orientation first (the CLI's --orient-rest applies a deterministic extension)"
        )
    topological_order(dag)


def fit(data: DiscreteDataset, dag: MixedGraph, smoothing: float = 1.0) -> FittedNetwork:
    """Laplace-smoothed CPTs for discrete nodes, conditional means for outcome sinks.

    A DAG node backed by a numeric column (``<node>_value`` or ``<node>`` itself
    with numeric-outcome kind) and without children is fitted as an outcome
    mean table; every other node needs a discrete column.
    """
    _check_dag(dag)
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    cpts, outcomes = {}, {}
    for node in dag.nodes:
        pa = tuple(sorted(parents(dag, node)))
        numeric = None
        for col in (outcome_column(node), node):
            if col in data and data.variable(col).kind is Kind.NUMERIC_OUTCOME:
                numeric = col
                break
        is_sink = not dag.children(node)
        if numeric is not None and is_sink:
            for p in pa:
                if p not in data or not data.variable(p).discrete:
                    raise ValueError(f"parent {p!r} of outcome {node!r} must be a discrete column")
            cfg, n_cfg = _config_index(data, pa)
            y = data.column(numeric)
            counts = np.bincount(cfg, minlength=n_cfg)
            sums = np.bincount(cfg, weights=y, minlength=n_cfg)
            global_mean = float(y.mean()) if len(y) else 0.0
            fallback = counts == 0
            means = np.where(fallback, global_mean, sums / np.maximum(counts, 1))
            if fallback.any():
                logger.warning("%s: %d empty parent configuration(s) use the global mean", node, int(fallback.sum()))
            outcomes[node] = OutcomeTable(pa, means, counts, fallback, global_mean)
            continue
        if node not in data or not data.variable(node).discrete:
            if numeric is not None:
                raise ValueError(f"numeric outcome {node!r} has children; outcomes must be sinks")
            raise ValueError(f"DAG node {node!r} has no discrete column in the dataset")
        for p in pa:
            if p not in data or not data.variable(p).discrete:
                raise ValueError(f"parent {p!r} of {node!r} needs a discrete column; numeric outcomes must be sinks")
        var = data.variable(node)
        cfg, n_cfg = _config_index(data, pa)
        k = var.n_levels
        counts = np.bincount(cfg * k + data.column(node), minlength=n_cfg * k).reshape(n_cfg, k)
        totals = counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            table = (counts + smoothing) / (totals + smoothing * k)
        table = np.where(totals + smoothing * k > 0, table, 1.0 / k)
        cpts[node] = DiscreteFactor(var.levels, pa, table, counts)
    return FittedNetwork(dag, cpts, outcomes, smoothing)


def _joint(net: FittedNetwork, do: Mapping[str, int], state_cap: int):
    """Joint table over all discrete nodes (axes in topological order)."""
    order = [n for n in net.order if n in net.cpts]
    axes = {n: i for i, n in enumerate(order)}
    shape = [len(net.cpts[n].levels) for n in order]
    states = math.prod(shape)
    if states > state_cap:
        raise InferenceError(
            f"exact enumeration needs {states} joint states (cap {state_cap}); "
            "coarsen the variable binning or raise the cap"
        )
    joint = np.ones(shape)
    for n in order:
        f = net.cpts[n]
        if n in do:
            ind = np.zeros(len(f.levels))
            ind[do[n]] = 1.0
            joint *= ind.reshape([-1 if a == axes[n] else 1 for a in range(len(order))])
            continue
        dims = list(f.parents) + [n]
        fac = f.table.reshape([len(net.cpts[d].levels) for d in dims])
        perm = np.argsort([axes[d] for d in dims])
        fac = fac.transpose(perm)
        sorted_dims = [dims[i] for i in perm]
        full = [1] * len(order)
        for d in sorted_dims:
            full[axes[d]] = len(net.cpts[d].levels)
        joint = joint * fac.reshape(full)
    return joint, axes


def _value_tensor(net: FittedNetwork, target: str, axes: Mapping[str, int], ndim: int) -> np.ndarray:
    if target in net.cpts:
        k = len(net.cpts[target].levels)
        shape = [1] * ndim
        shape[axes[target]] = k
        return np.arange(k, dtype=float).reshape(shape)
    if target in net.outcome_means:
        t = net.outcome_means[target]
        dims = list(t.parents)
        if not dims:
            return np.full([1] * ndim, t.means[0])
        tab = t.means.reshape([len(net.cpts[d].levels) for d in dims])
        perm = np.argsort([axes[d] for d in dims])
        tab = tab.transpose(perm)
        shape = [1] * ndim
        for i in perm:
            shape[axes[dims[i]]] = len(net.cpts[dims[i]].levels)
        return tab.reshape(shape)
    raise InferenceError(f"unknown node {target!r}")


def interventional_expectation(
    net: FittedNetwork, q: InterventionQuery, state_cap: int = DEFAULT_STATE_CAP
) -> float:
    """E[target | do(do_node = do_value)] by truncated factorization and exact enumeration.

    Discrete targets are valued by level index (0, 1, 2, ...); numeric outcome
    targets by their fitted conditional means.
    """
    if q.target == q.do_node:
        raise InferenceError("target and intervention node must differ")
    if q.do_node in net.outcome_means:
        raise InferenceError(f"cannot intervene on numeric outcome {q.do_node!r}")
    v = net.level_index(q.do_node, q.do_value)
    joint, axes = _joint(net, {q.do_node: v}, state_cap)
    values = _value_tensor(net, q.target, axes, joint.ndim)
    return float(np.sum(joint * values))


def conditional_expectation(
    net: FittedNetwork, target: str, given: str, value, state_cap: int = DEFAULT_STATE_CAP
) -> float:
    """Observational E[target | given = value] from the fitted joint. Not a causal quantity."""
    v = net.level_index(given, value)
    joint, axes = _joint(net, {}, state_cap)
    values = _value_tensor(net, target, axes, joint.ndim)
    sl = [slice(None)] * joint.ndim
    sl[axes[given]] = slice(v, v + 1)
    sub = joint[tuple(sl)]
    vals = np.broadcast_to(values, joint.shape)[tuple(sl)]
    return float(np.sum(sub * vals) / np.sum(sub))


def ace(net: FittedNetwork, cause: str, effect: str, x0, x1, state_cap: int = DEFAULT_STATE_CAP) -> float:
    """E[effect | do(cause = x1)] - E[effect | do(cause = x0)].

    Exactly 0.0 when ``effect`` is not a descendant of ``cause``.
    """
    i0, i1 = net.level_index(cause, x0), net.level_index(cause, x1)
    if i0 == i1:
        raise InferenceError("contrast levels must differ")
    if effect not in descendants(net.dag, cause):
        if effect not in net.dag.nodes:
            raise InferenceError(f"unknown node {effect!r}")
        return 0.0
    e1 = interventional_expectation(net, InterventionQuery(effect, cause, i1), state_cap)
    e0 = interventional_expectation(net, InterventionQuery(effect, cause, i0), state_cap)
    return e1 - e0


def conditional_difference(net: FittedNetwork, cause: str, effect: str, x0, x1) -> float:
    """Observational counterpart of :func:`ace`; confounded, for comparison only."""
    return conditional_expectation(net, effect, cause, x1) - conditional_expectation(net, effect, cause, x0)


# reports

@dataclass
class AceCell:
    """One (cause, effect) entry; ``populated`` cells are the ones shown in the table."""

    cause: str
    effect: str
    contrast: tuple[str, str]
    ace: float
    populated: bool
    reason: str = ""  # why an entry is empty: "no path" or "no direct edge"
    per_level_aces: list = field(default_factory=list)
    policy: str = "extreme"

    def to_json(self) -> dict:
        return {
            "cause": self.cause,
            "effect": self.effect,
            "contrast": {"x0": self.contrast[0], "x1": self.contrast[1], "policy": self.policy},
            "ace": self.ace,
            "populated": self.populated,
            "reason": self.reason,
            "per_level_aces": [{"x0": a, "x1": b, "ace": v} for a, b, v in self.per_level_aces],
        }


@dataclass
class AceReport:
    rows: list[AceCell]
    causes: tuple[str, ...]
    effects: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def cell(self, cause: str, effect: str) -> AceCell:
        for c in self.rows:
            if c.cause == cause and c.effect == effect:
                return c
        raise KeyError((cause, effect))

    def populated(self) -> set[tuple[str, str]]:
        return {(c.cause, c.effect) for c in self.rows if c.populated}

    def to_json(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "causes": list(self.causes),
            "effects": list(self.effects),
            "rows": [c.to_json() for c in self.rows],
        }

    def to_table(self, digits: int = 2) -> str:
        """Aligned text table: causes as rows, effects as columns, ``--`` for empty cells."""
        header = ["Cause", *self.effects]
        body = []
        for cause in self.causes:
            line = [cause]
            for effect in self.effects:
                c = self.cell(cause, effect)
                line.append(f"{c.ace:.{digits}f}" if c.populated else "--")
            body.append(line)
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]

        def fmt(r):
            cols = [r[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(r[1:], widths[1:])]
            return "  ".join(cols).rstrip()

        lines = [fmt(header), "  ".join("-" * w for w in widths)]
        lines += [fmt(r) for r in body]
        meta = self.metadata
        notes = ", ".join(f"{k}={meta[k]}" for k in ("model", "dag_source", "contrast", "units") if meta.get(k))
        if notes:
            lines.append(f"({notes})")
        return "\n".join(lines) + "\n"


def ace_report(
    net: FittedNetwork,
    causes: Iterable[str] | None = None,
    effects: Iterable[str] | None = None,
    contrast_policy: str = "extreme",
    populate: str = "edge",
    metadata: Mapping | None = None,
    state_cap: int = DEFAULT_STATE_CAP,
) -> AceReport:
    """ACE for every (cause, effect) pair.

    With ``populate="edge"`` a cell is shown only when the DAG has the direct
    edge cause -> effect, so empty cells mark absent edges; ``populate="path"``
    shows every pair joined by a directed path. The value is always the total
    interventional effect, and pairs without a path get 0 with reason
    "no path". ``contrast_policy="extreme"`` contrasts the lowest and highest
    level, ``"adjacent"`` reports the mean step between adjacent levels (a
    per-unit effect). Adjacent-level ACEs are listed either way.
    """
    if contrast_policy not in CONTRASTS:
        raise ValueError(f"unknown contrast policy {contrast_policy!r}; expected one of {CONTRASTS}")
    if populate not in ("edge", "path"):
        raise ValueError("populate must be 'edge' or 'path'")
    nodes = set(net.dag.nodes)
    effects = tuple(e for e in (REPORT_EFFECTS if effects is None else effects) if e in nodes)
    if causes is None:
        causes = [c for c in REPORT_CAUSES if c in net.cpts] or [
            n for n in net.order if n in net.cpts and n not in effects
        ]
    causes = tuple(c for c in causes if c in nodes)
    rows = []
    for cause in causes:
        levels = net.levels(cause)
        contrast = (levels[0], levels[-1])
        for effect in effects:
            if not has_directed_path(net.dag, cause, effect):
                rows.append(AceCell(cause, effect, contrast, 0.0, False, "no path", policy=contrast_policy))
                continue
            steps = [
                (levels[i], levels[i + 1], ace(net, cause, effect, levels[i], levels[i + 1], state_cap))
                for i in range(len(levels) - 1)
            ]
            total = ace(net, cause, effect, levels[0], levels[-1], state_cap)
            value = total if contrast_policy == "extreme" else total / (len(levels) - 1)
            shown = populate == "path" or net.dag.is_directed(cause, effect)
            reason = "" if shown else "no direct edge"
            rows.append(AceCell(cause, effect, contrast, value, shown, reason, steps, contrast_policy))
    meta = {"contrast": contrast_policy, "populate": populate, "smoothing": net.smoothing}
    meta.update(metadata or {})
    return AceReport(rows, causes, effects, meta)


def orient_rest(graph: MixedGraph, log: list | None = None) -> MixedGraph:
    """Deterministic DAG extension of a partially directed graph.

    Undirected edges are taken in lexicographic order and pointed from the
    smaller to the larger name unless that closes a directed cycle; Meek
    propagation runs after each choice.
    """
    from .discovery import meek_closure

    if not graph.is_cpdag_marks():
        raise GraphError("orient_rest handles directed and undirected edges only")
    log = log if log is not None else []
    g = meek_closure(graph, log)
    while True:
        pending = [e for e in g.edges if g.is_undirected(*e)]
        if not pending:
            return g
        a, b = pending[0]
        trial = g.with_edge(a, b, Mark.TAIL, Mark.ARROW)
        if trial.has_directed_cycle():
            trial = g.with_edge(a, b, Mark.ARROW, Mark.TAIL)
            a, b = b, a
        logger.warning("orienting undirected edge %s - %s as %s -> %s (deterministic extension)", a, b, a, b)
        log.append({"event": "orient", "rule": "extension", "x": a, "y": b})
        g = meek_closure(trial, log)


class CausalEffectEstimator(BaseEstimator):
    """Fit a Bayesian network on a fixed DAG and query average causal effects.

    Parameters
    ----------
    dag : MixedGraph
        Fully directed acyclic graph over the dataset's variables.
    smoothing : float
        Laplace pseudo-count added to every CPT cell.
    contrast : {"extreme", "adjacent"}
        Headline contrast used by :meth:`report`.
    populate : {"edge", "path"}
        Which (cause, effect) cells of the report are filled.
    """

    def __init__(self, dag=None, smoothing=1.0, contrast="extreme", populate="edge", state_cap=DEFAULT_STATE_CAP):
        self.dag = dag
        self.smoothing = smoothing
        self.contrast = contrast
        self.populate = populate
        self.state_cap = state_cap

    def fit(self, X, y=None):
        if self.dag is None:
            raise ValueError("CausalEffectEstimator needs a DAG")
        self.network_ = fit(check_dataset(X), self.dag, self.smoothing)
        return self

    def interventional_expectation(self, target, do_node, do_value) -> float:
        check_is_fitted(self, "network_")
        return interventional_expectation(self.network_, InterventionQuery(target, do_node, do_value), self.state_cap)

    def ace(self, cause, effect, x0=None, x1=None) -> float:
        check_is_fitted(self, "network_")
        levels = self.network_.levels(cause)
        x0 = levels[0] if x0 is None else x0
        x1 = levels[-1] if x1 is None else x1
        return ace(self.network_, cause, effect, x0, x1, self.state_cap)

    def report(self, causes=None, effects=None, metadata=None) -> AceReport:
        check_is_fitted(self, "network_")
        return ace_report(
            self.network_, causes, effects, self.contrast, self.populate, metadata, self.state_cap
        )
