"""Ground-truth structural causal models: validation, sampling and exact effects.

Parent configurations are always enumerated over the node's parents in
lexicographic order, first parent most significant, and keyed in JSON by the
comma-joined parent level labels (``""`` for root nodes).
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .graph import (
    DiscreteDataset,
    Kind,
    Mark,
    MixedGraph,
    Role,
    VariableSchema,
    outcome_column,
    topological_order,
)

RNG_ALGORITHM = "numpy.PCG64 (SeedSequence([seed, block]), block=8192 rows)"
BLOCK_ROWS = 8192


class ScmError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    """One node: a CPT for discrete nodes, a mean table plus noise bound for outcomes."""

    name: str
    levels: tuple[str, ...] = ()
    cpt: Mapping[tuple[str, ...], tuple[float, ...]] | None = None
    means: Mapping[tuple[str, ...], float] | None = None
    noise: float = 0.0
    role: Role = Role.EXTRINSIC

    @property
    def is_outcome(self) -> bool:
        return self.means is not None


@dataclass(frozen=True)
class ScmSpec:
    nodes: tuple[NodeSpec, ...]
    edges: tuple[tuple[str, str], ...]
    seed: int | None = None
    name: str = ""
    notes: str = ""
    hidden: tuple[str, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.name: n for n in self.nodes})

    def node(self, name: str) -> NodeSpec:
        try:
            return self._index[name]
        except KeyError:
            raise ScmError(f"unknown node {name!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    @property
    def dag(self) -> MixedGraph:
        return MixedGraph.from_directed(self.names, self.edges)

    def parents(self, name: str) -> tuple[str, ...]:
        return tuple(sorted(a for a, b in self.edges if b == name))

    def parent_configs(self, name: str) -> list[tuple[str, ...]]:
        return list(itertools.product(*(self.node(p).levels for p in self.parents(name))))

    # JSON

    def to_json(self) -> dict:
        nodes = []
        for n in self.nodes:
            obj = {"name": n.name, "levels": list(n.levels), "role": Role(n.role).value}
            if n.is_outcome:
                obj["means"] = {",".join(k): v for k, v in n.means.items()}
                obj["noise"] = n.noise
            else:
                obj["cpt"] = {",".join(k): list(v) for k, v in (n.cpt or {}).items()}
            nodes.append(obj)
        out = {"name": self.name, "nodes": nodes, "edges": [list(e) for e in self.edges], "seed": self.seed}
        if self.notes:
            out["notes"] = self.notes
        if self.hidden:
            out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_json(cls, obj) -> "ScmSpec":
        if isinstance(obj, (str, Path)) and not str(obj).lstrip().startswith("{"):
            obj = json.loads(Path(obj).read_text())
        elif isinstance(obj, str):
            obj = json.loads(obj)
        try:
            nodes = []
            for n in obj["nodes"]:
                def key(k):
                    return tuple(k.split(",")) if k != "" else ()

                if "means" in n:
                    nodes.append(NodeSpec(
                        n["name"], tuple(n.get("levels", ())),
                        means={key(k): float(v) for k, v in n["means"].items()},
                        noise=float(n.get("noise", 0.0)),
                        role=Role(n.get("role", "error")),
                    ))
                else:
                    nodes.append(NodeSpec(
                        n["name"], tuple(n["levels"]),
                        cpt={key(k): tuple(float(p) for p in v) for k, v in n["cpt"].items()},
                        role=Role(n.get("role", "extrinsic")),
                    ))
            edges = tuple((a, b) for a, b in obj["edges"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScmError(f"malformed SCM JSON: {exc}") from None
        return cls(
            tuple(nodes), edges, obj.get("seed"), obj.get("name", ""), obj.get("notes", ""),
            tuple(obj.get("hidden", ())),
        )


def validate(spec: ScmSpec) -> list[str]:
    """Every broken invariant of ``spec`` as a human-readable message."""
    problems = []
    names = [n.name for n in spec.nodes]
    if len(set(names)) != len(names):
        problems.append("duplicate node names")
    known = set(names)
    for a, b in spec.edges:
        for n in (a, b):
            if n not in known:
                problems.append(f"edge ({a}, {b}) references unknown node {n!r}")
        if a == b:
            problems.append(f"self-loop on {a!r}")
    for h in spec.hidden:
        if h not in known:
            problems.append(f"hidden node {h!r} is not a node")
    if len(set(spec.edges)) != len(spec.edges):
        problems.append("duplicate edges")
    if problems:
        return problems
    cycle = _cycle_nodes(spec)
    if cycle:
        return [f"directed cycle among {cycle}"]
    try:
        dag = spec.dag
    except ValueError as exc:
        return [str(exc)]
    for n in spec.nodes:
        if n.is_outcome:
            if n.levels:
                problems.append(f"outcome {n.name!r} must not declare levels")
            if dag.children(n.name):
                problems.append(f"outcome {n.name!r} has children {sorted(dag.children(n.name))}; outcomes must be sinks")
            if not (n.noise >= 0 and math.isfinite(n.noise)):
                problems.append(f"outcome {n.name!r} has invalid noise bound {n.noise}")
        else:
            if len(n.levels) < 2 or len(set(n.levels)) != len(n.levels):
                problems.append(f"node {n.name!r} needs >= 2 distinct levels")
            if any("," in lv for lv in n.levels):
                problems.append(f"node {n.name!r} has a level label containing ','")
            if n.cpt is None:
                problems.append(f"discrete node {n.name!r} has no CPT")
        for p in spec.parents(n.name):
            if spec.node(p).is_outcome:
                problems.append(f"outcome {p!r} is a parent of {n.name!r}")
    if problems:
        return problems
    for n in spec.nodes:
        configs = spec.parent_configs(n.name)
        table = n.means if n.is_outcome else n.cpt
        extra = set(table) - set(configs)
        for k in sorted(extra):
            problems.append(f"node {n.name!r} has a row for unknown parent configuration {k}")
        for k in configs:
            if k not in table:
                problems.append(f"node {n.name!r} is missing parent configuration {k}")
                continue
            if n.is_outcome:
                if not math.isfinite(table[k]):
                    problems.append(f"outcome {n.name!r} row {k} has a non-finite mean")
                continue
            row = table[k]
            if len(row) != len(n.levels):
                problems.append(f"node {n.name!r} row {k} has {len(row)} entries, expected {len(n.levels)}")
            elif any(p < 0 or not math.isfinite(p) for p in row):
                problems.append(f"node {n.name!r} row {k} has a negative or non-finite probability")
            elif abs(sum(row) - 1.0) > 1e-9:
                problems.append(f"node {n.name!r} row {k} sums to {sum(row):.12g}, not 1")
    return problems


def _cycle_nodes(spec: ScmSpec) -> list[str]:
    indeg = {n: 0 for n in spec.names}
    for _, b in spec.edges:
        indeg[b] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    while ready:
        n = ready.pop()
        for a, b in spec.edges:
            if a == n:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
    return sorted(n for n, d in indeg.items() if d > 0)


def check(spec: ScmSpec) -> None:
    problems = validate(spec)
    if problems:
        raise ScmError("invalid SCM: " + "; ".join(problems))


def schema(spec: ScmSpec) -> list[VariableSchema]:
    """Dataset schema produced by :func:`forward_sample` (outcomes as ``<name>_value``)."""
    out = []
    for n in spec.nodes:
        if n.is_outcome:
            out.append(VariableSchema(outcome_column(n.name), Kind.NUMERIC_OUTCOME, (), n.role))
        else:
            out.append(VariableSchema(n.name, Kind.ORDINAL, n.levels, n.role))
    return out


def _tables(spec: ScmSpec):
    compiled = {}
    for n in spec.nodes:
        configs = spec.parent_configs(n.name)
        if n.is_outcome:
            compiled[n.name] = np.array([n.means[k] for k in configs], dtype=float)
        else:
            compiled[n.name] = np.array([n.cpt[k] for k in configs], dtype=float)
    return compiled


def _config_index(spec: ScmSpec, name: str, cols: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    idx = np.zeros(n, dtype=np.int64)
    for p in spec.parents(name):
        idx = idx * len(spec.node(p).levels) + cols[p]
    return idx


def forward_sample(spec: ScmSpec, n: int, seed: int | None = None, n_jobs: int = 1) -> DiscreteDataset:
    """Draw ``n`` rows in topological order.

    Rows are generated in fixed blocks, each with its own substream derived
    from ``(seed, block index)``, so output depends only on the seed, never on
    ``n_jobs``.
    """
    check(spec)
    if n < 1:
        raise ScmError("n must be positive")
    seed = spec.seed if seed is None else seed
    if seed is None:
        raise ScmError("a seed is required (argument or spec)")
    order = topological_order(spec.dag)
    tables = _tables(spec)

    def block(b):
        size = min(BLOCK_ROWS, n - b * BLOCK_ROWS)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), b])))
        cols = {}
        for name in order:
            node = spec.node(name)
            cfg = _config_index(spec, name, cols, size)
            if node.is_outcome:
                noise = rng.uniform(-node.noise, node.noise, size) if node.noise > 0 else np.zeros(size)
                cols[name] = tables[name][cfg] + noise
            else:
                cum = np.cumsum(tables[name][cfg], axis=1)
                u = rng.random(size)
                lv = (u[:, None] >= cum).sum(axis=1)
                cols[name] = np.minimum(lv, len(node.levels) - 1)
        return cols

    n_blocks = -(-n // BLOCK_ROWS)
    if n_jobs > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            blocks = list(pool.map(block, range(n_blocks)))
    else:
        blocks = [block(b) for b in range(n_blocks)]
    out = {}
    for var, node in zip(schema(spec), spec.nodes):
        out[var.name] = np.concatenate([blk[node.name] for blk in blocks])
    return DiscreteDataset(schema(spec), out)


def true_cpdag(spec: ScmSpec) -> MixedGraph:
    """CPDAG of the generating DAG: skeleton, v-structures, then Meek closure."""
    from .discovery import meek_closure

    check(spec)
    dag = spec.dag
    colliders = set()
    for z in dag.nodes:
        pa = sorted(p for p in dag.adjacent(z) if dag.is_directed(p, z))
        for x, y in itertools.combinations(pa, 2):
            if not dag.is_adjacent(x, y):
                colliders.update({(x, z), (y, z)})
    edges = []
    for a, b in dag.edges:
        if (a, b) in colliders:
            edges.append((a, b, Mark.TAIL, Mark.ARROW))
        elif (b, a) in colliders:
            edges.append((a, b, Mark.ARROW, Mark.TAIL))
        else:
            edges.append((a, b, Mark.TAIL, Mark.TAIL))
    return meek_closure(MixedGraph(dag.nodes, edges))


def interventional_mean(spec: ScmSpec, target: str, do: Mapping[str, str]) -> float:
    """E[target | do(...)] by recursive enumeration over the model's own tables.

    Only ancestors of ``target`` in the mutilated model are enumerated.
    """
    check(spec)
    for k, v in do.items():
        node = spec.node(k)
        if node.is_outcome or v not in node.levels:
            raise ScmError(f"cannot intervene on {k!r} with value {v!r}")

    def parents(n):
        return () if n in do else spec.parents(n)

    needed = set()
    stack = [target]
    while stack:
        n = stack.pop()
        for p in parents(n):
            if p not in needed:
                needed.add(p)
                stack.append(p)
    order = [n for n in topological_order(spec.dag) if n in needed]

    total = 0.0
    # depth-first over assignments of the needed discrete ancestors
    def walk(i, assign, prob):
        nonlocal total
        if prob == 0.0:
            return
        if i == len(order):
            total += prob * _value(spec, target, assign, do)
            return
        name = order[i]
        node = spec.node(name)
        if name in do:
            assign[name] = do[name]
            walk(i + 1, assign, prob)
        else:
            row = node.cpt[tuple(assign[p] for p in parents(name))]
            for lv, p in zip(node.levels, row):
                assign[name] = lv
                walk(i + 1, assign, prob * p)
        del assign[name]

    walk(0, {}, 1.0)
    return total


def _value(spec, target, assign, do):
    node = spec.node(target)
    if target in do:
        return float(node.levels.index(do[target]))
    key = tuple(assign[p] for p in spec.parents(target))
    if node.is_outcome:
        return node.means[key]
    return float(sum(i * p for i, p in enumerate(node.cpt[key])))


def closed_form_ace(spec: ScmSpec, cause: str, effect: str, x0: str, x1: str) -> float:
    """Exact E[effect | do(cause=x1)] - E[effect | do(cause=x0)] from the generating tables."""
    if cause == effect:
        raise ScmError("cause and effect must differ")
    if x0 == x1:
        raise ScmError("contrast levels must differ")
    return interventional_mean(spec, effect, {cause: x1}) - interventional_mean(spec, effect, {cause: x0})


# shipped fixtures

def load_fixture(name: str = "asr_errors") -> ScmSpec:
    """Load a fixture shipped in ``asrcause/data`` (``asr_errors`` or ``latent_confounder``)."""
    path = resources.files("asrcause") / "data" / f"{name}.json"
    return ScmSpec.from_json(json.loads(path.read_text()))


def fixture_path(name: str = "asr_errors") -> Path:
    return Path(str(resources.files("asrcause") / "data" / f"{name}.json"))


def observed(spec: ScmSpec, data: DiscreteDataset) -> DiscreteDataset:
    """Drop the model's hidden (latent) columns."""
    return drop(data, spec.hidden)


def drop(data: DiscreteDataset, names: Sequence[str]) -> DiscreteDataset:
    return data.select([n for n in data.names if n not in set(names)])


# raw corpus export

ASR_NODES = ("Age", "Gender", "GoP", "SNR", "VocabDifficulty", "NumWords", "Subs", "Del", "Ins")
_GOP_BANDS = ((0.05, 0.30), (0.40, 0.60), (0.70, 0.99))
_GOP_BREAKS = (0.35, 0.65)
_SNR_BANDS = {"Noisy": (-5.0, 4.9), "Average": (5.0, 19.9), "Clean": (20.0, 35.0)}
_WORD_GROUPS = (("c", 5000), ("m", 50), ("r", 1))  # common, medium, rare
_GROUP_SIZE = 48
# sentence length bands: NumWords level q spans _WORDS_BASE + _WORDS_WIDTH * q words upwards;
# long enough that alignment never trades a deletion plus insertion for a substitution
_WORDS_BASE, _WORDS_WIDTH = 20, 5


@dataclass(frozen=True)
class RawCorpus:
    """Utterance records regenerated from a discrete sample, with the bins that recover it."""

    records: list
    lexicon: object
    breakpoints: dict
    age_bins: tuple
    age_labels: tuple

    def feature_config(self, **overrides):
        from .features import FeatureConfig

        return FeatureConfig(age_bins=self.age_bins, age_labels=self.age_labels, **overrides)


def emit_records(spec: ScmSpec, data: DiscreteDataset, seed: int = 0) -> RawCorpus:
    """Invert the ASR feature pipeline for a sample of an ASR-shaped spec.

    Each row becomes an :class:`~asrcause.features.UtteranceRecord` whose raw
    values fall strictly inside the band of its discrete level: ages in
    three-year bands, SNR inside the dB bins, GoP inside fixed bands, and a
    reference sentence whose length and vocabulary rarity land in the row's
    NumWords and VocabDifficulty bins. Error counts are the outcome values
    rounded and clipped to the sentence, realised as leading substitutions,
    following deletions and trailing insertions; the feature pipeline then
    re-derives them by alignment.
    """
    from .features import SNR_LEVELS, TERTILE_LEVELS, FrequencyLexicon, UtteranceRecord, word_rarity

    missing = [n for n in ASR_NODES if n not in spec.names]
    if missing:
        raise ScmError(f"spec lacks ASR nodes {missing}")
    for name, want in (("GoP", TERTILE_LEVELS), ("VocabDifficulty", TERTILE_LEVELS), ("SNR", SNR_LEVELS)):
        if tuple(spec.node(name).levels) != tuple(want):
            raise ScmError(f"{name} levels must be {list(want)}")
    genders = spec.node("Gender").levels
    if not set(genders) <= {"F", "M", "unknown"}:
        raise ScmError("Gender levels must be drawn from F, M, unknown")
    age_levels = tuple(spec.node("Age").levels)
    n_word_levels = len(spec.node("NumWords").levels)

    groups = [[f"{p}{j:02d}" for j in range(_GROUP_SIZE)] for p, _ in _WORD_GROUPS]
    counts = {w: c for (_, c), words in zip(_WORD_GROUPS, groups) for w in words}
    lex = FrequencyLexicon.from_counts(counts, sum(counts.values()))
    rar = [word_rarity(g[0], lex) for g in groups]
    vocab_breaks = ((rar[0] + rar[1]) / 2, (rar[1] + rar[2]) / 2)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    col = {n: data.column(n) for n in ASR_NODES if n in data and data.variable(n).discrete}
    val = {n: data.column(outcome_column(n)) for n in ("Subs", "Del", "Ins")}
    records = []
    for i in range(data.n_rows):
        a = int(col["Age"][i])
        age = float(6 + 3 * a + rng.integers(0, 3))
        lo, hi = _SNR_BANDS[SNR_LEVELS[col["SNR"][i]]]
        snr = round(float(rng.uniform(lo, hi)), 3)
        lo, hi = _GOP_BANDS[col["GoP"][i]]
        gop = round(float(rng.uniform(lo, hi)), 4)
        n_words = int(_WORDS_BASE + _WORDS_WIDTH * col["NumWords"][i] + rng.integers(0, _WORDS_WIDTH))
        ref = [str(w) for w in rng.choice(groups[col["VocabDifficulty"][i]], n_words, replace=False)]
        s = int(np.clip(round(val["Subs"][i]), 0, n_words))
        d = int(np.clip(round(val["Del"][i]), 0, n_words - s))
        k = int(max(0, round(val["Ins"][i])))
        hyp = [f"s{j:02d}" for j in range(s)] + ref[s + d:] + [f"i{j:02d}" for j in range(k)]
        records.append(
            UtteranceRecord(
                utt_id=f"utt{i:06d}",
                age_years=age,
                gender=genders[col["Gender"][i]],
                snr_db=snr,
                ref=tuple(ref),
                hyp=tuple(hyp),
                gop_utt=gop,
            )
        )
    age_bins = tuple(float(8 + 3 * a) for a in range(len(age_levels) - 1))
    breakpoints = {
        "GoP": list(_GOP_BREAKS),
        "VocabDifficulty": list(vocab_breaks),
        "NumWords": [float(_WORDS_BASE + _WORDS_WIDTH * (j + 1) - 1) for j in range(n_word_levels - 1)],
    }
    return RawCorpus(records, lex, breakpoints, age_bins, age_levels)
