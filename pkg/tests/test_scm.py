import itertools
import json

import numpy as np
import pytest

from asrcause import scm
from asrcause.citest import chi2_sf
from asrcause.graph import MixedGraph
from asrcause.quantify import DiscreteFactor, FittedNetwork, InterventionQuery, OutcomeTable, ace, interventional_expectation

from .oracles import cpdag_oracle


def binary_spec(edges, cpts, name="t", means=None):
    nodes = []
    for n, cpt in cpts.items():
        nodes.append({"name": n, "levels": ["0", "1"], "cpt": cpt})
    for n, (table, noise) in (means or {}).items():
        nodes.append({"name": n, "means": table, "noise": noise})
    return scm.ScmSpec.from_json({"name": name, "seed": 1, "nodes": nodes, "edges": edges})


CHAIN = binary_spec(
    [["X", "Z"], ["Z", "Y"]],
    {"X": {"": [0.5, 0.5]}, "Z": {"0": [0.8, 0.2], "1": [0.2, 0.8]}, "Y": {"0": [0.7, 0.3], "1": [0.3, 0.7]}},
)
COLLIDER = binary_spec(
    [["X", "Z"], ["Y", "Z"]],
    {
        "X": {"": [0.5, 0.5]},
        "Y": {"": [0.4, 0.6]},
        "Z": {"0,0": [0.9, 0.1], "0,1": [0.5, 0.5], "1,0": [0.5, 0.5], "1,1": [0.1, 0.9]},
    },
)


# validate

def test_validate_examples():
    assert scm.validate(scm.load_fixture()) == []
    assert scm.validate(scm.load_fixture("latent_confounder")) == []
    bad = binary_spec([], {"A": {"": [0.5, 0.4]}})
    problems = scm.validate(bad)
    assert len(problems) == 1 and "'A'" in problems[0] and "()" in problems[0]
    cyc = binary_spec(
        [["A", "B"], ["B", "A"]],
        {"A": {"0": [0.5, 0.5], "1": [0.5, 0.5]}, "B": {"0": [0.5, 0.5], "1": [0.5, 0.5]}},
    )
    problems = scm.validate(cyc)
    assert len(problems) == 1 and "cycle" in problems[0] and "'A'" in problems[0] and "'B'" in problems[0]


def test_validate_structure_problems():
    spec = binary_spec([["A", "Q"]], {"A": {"": [0.5, 0.5]}})
    assert any("unknown node" in p for p in scm.validate(spec))
    spec = binary_spec([["Y", "A"]], {"A": {"0": [0.5, 0.5], "1": [0.5, 0.5]}}, means={"Y": ({"": 1.0}, 0.5)})
    assert any("sink" in p for p in scm.validate(spec))
    spec = binary_spec([], {"A": {"": [0.5, 0.5], "x": [0.5, 0.5]}})
    assert any("unknown parent configuration" in p for p in scm.validate(spec))
    with pytest.raises(scm.ScmError, match="invalid SCM"):
        scm.forward_sample(binary_spec([], {"A": {"": [0.9, 0.9]}}), 10, seed=1)


# sampling

def test_determinism_and_distinct_seeds():
    spec = scm.load_fixture()
    a = scm.forward_sample(spec, 500, seed=7)
    assert a == scm.forward_sample(spec, 500, seed=7)
    b = scm.forward_sample(spec, 500, seed=8)
    assert any(not np.array_equal(a.column(n)[:10], b.column(n)[:10]) for n in a.names)


def test_threads_and_prefix_stability():
    spec = scm.load_fixture()
    n = 2 * scm.BLOCK_ROWS + 17
    a = scm.forward_sample(spec, n, seed=3)
    assert a == scm.forward_sample(spec, n, seed=3, n_jobs=3)
    short = scm.forward_sample(spec, scm.BLOCK_ROWS, seed=3)
    for name in a.names:
        assert np.array_equal(a.column(name)[: scm.BLOCK_ROWS], short.column(name))


def test_root_frequency():
    spec = binary_spec([], {"R": {"": [0.2, 0.8]}})
    d = scm.forward_sample(spec, 100_000, seed=11)
    freq = np.bincount(d.column("R"), minlength=2) / 100_000
    assert np.all(np.abs(freq - [0.2, 0.8]) < 0.01)


def test_fixture_cpt_goodness_of_fit():
    spec = scm.load_fixture()
    d = scm.forward_sample(spec, 100_000, seed=12)
    for node in spec.nodes:
        if node.is_outcome:
            continue
        pa = spec.parents(node.name)
        for cfg in spec.parent_configs(node.name):
            mask = np.ones(d.n_rows, dtype=bool)
            for p, lv in zip(pa, cfg):
                mask &= d.column(p) == spec.node(p).levels.index(lv)
            obs = np.bincount(d.column(node.name)[mask], minlength=len(node.levels))
            exp = obs.sum() * np.asarray(node.cpt[cfg])
            stat = float(((obs - exp) ** 2 / exp).sum())
            assert chi2_sf(stat, len(node.levels) - 1) > 1e-4, (node.name, cfg)


def test_outcome_noise_is_bounded_and_centered():
    spec = scm.load_fixture()
    d = scm.forward_sample(spec, 20_000, seed=13)
    node = spec.node("Subs")
    pa = spec.parents("Subs")
    means = np.array([
        node.means[tuple(spec.node(p).levels[d.column(p)[i]] for p in pa)] for i in range(d.n_rows)
    ])
    resid = d.column("Subs_value") - means
    assert np.all(np.abs(resid) <= node.noise + 1e-12)
    assert abs(resid.mean()) < 0.05


def test_fixture_faithfulness_margin():
    spec = scm.load_fixture()
    for node in spec.nodes:
        pa = spec.parents(node.name)
        table = node.means if node.is_outcome else node.cpt
        for i, p in enumerate(pa):
            lv = spec.node(p).levels
            others = [spec.node(q).levels for q in pa if q != p]
            for rest in itertools.product(*others):
                lo, hi = list(rest), list(rest)
                lo.insert(i, lv[0])
                hi.insert(i, lv[-1])
                a, b = table[tuple(lo)], table[tuple(hi)]
                gap = abs(a - b) if node.is_outcome else 0.5 * np.abs(np.subtract(a, b)).sum()
                assert gap >= 0.2, (node.name, p, rest)


# ground truth

def test_true_cpdag_examples():
    assert scm.true_cpdag(COLLIDER) == COLLIDER.dag
    cp = scm.true_cpdag(CHAIN)
    assert cp == MixedGraph.from_undirected(["X", "Y", "Z"], [("X", "Z"), ("Z", "Y")])
    assert cp == cpdag_oracle(CHAIN.dag)
    fx = scm.load_fixture()
    assert scm.true_cpdag(fx) == cpdag_oracle(fx.dag)


def test_closed_form_examples():
    assert scm.closed_form_ace(COLLIDER, "X", "Y", "0", "1") == 0.0
    spec = binary_spec(
        [["X", "S"]], {"X": {"": [0.3, 0.7]}}, means={"S": ({"0": 2.0, "1": 5.5}, 1.0)}
    )
    assert scm.closed_form_ace(spec, "X", "S", "0", "1") == pytest.approx(3.5)
    with pytest.raises(scm.ScmError):
        scm.closed_form_ace(spec, "X", "S", "0", "0")
    with pytest.raises(scm.ScmError):
        scm.closed_form_ace(spec, "X", "S", "0", "2")


def spec_network(spec):
    # a FittedNetwork holding the generating tables, so quantify can be compared with no estimation
    cpts, outcomes = {}, {}
    for node in spec.nodes:
        pa = spec.parents(node.name)
        configs = spec.parent_configs(node.name)
        if node.is_outcome:
            means = np.array([node.means[c] for c in configs])
            n = np.ones(len(configs), dtype=int)
            outcomes[node.name] = OutcomeTable(pa, means, n, np.zeros(len(configs), bool), float(means.mean()))
        else:
            table = np.array([node.cpt[c] for c in configs])
            cpts[node.name] = DiscreteFactor(node.levels, pa, table, np.ones_like(table))
    return FittedNetwork(spec.dag, cpts, outcomes, 0.0)


def test_closed_form_agrees_with_quantify_enumerator():
    spec = scm.load_fixture()
    net = spec_network(spec)
    for cause, effect in (("Age", "Subs"), ("GoP", "Subs"), ("NumWords", "Del"), ("SNR", "Ins"), ("Age", "GoP")):
        lv = spec.node(cause).levels
        for a, b in itertools.combinations(lv, 2):
            truth = scm.closed_form_ace(spec, cause, effect, a, b)
            assert ace(net, cause, effect, a, b) == pytest.approx(truth, abs=1e-9)
    for v in spec.node("Age").levels:
        got = interventional_expectation(net, InterventionQuery("GoP", "Age", v))
        assert got == pytest.approx(scm.interventional_mean(spec, "GoP", {"Age": v}), abs=1e-9)


def test_fixture_documented_signs():
    spec = scm.load_fixture()
    assert scm.closed_form_ace(spec, "Age", "Subs", "Young", "Older") < 0
    assert scm.closed_form_ace(spec, "GoP", "Subs", "Low", "High") < 0
    assert scm.closed_form_ace(spec, "Gender", "Subs", "F", "M") == 0.0


# serialisation and helpers

def test_json_round_trip(tmp_path):
    spec = scm.load_fixture()
    assert scm.ScmSpec.from_json(spec.to_json()) == spec
    path = tmp_path / "s.json"
    path.write_text(json.dumps(spec.to_json()))
    assert scm.ScmSpec.from_json(path) == spec
    assert scm.ScmSpec.from_json(json.dumps(spec.to_json())) == spec
    with pytest.raises(scm.ScmError, match="malformed"):
        scm.ScmSpec.from_json({"nodes": [{"levels": []}], "edges": []})


def test_observed_drops_hidden():
    spec = scm.load_fixture("latent_confounder")
    d = scm.forward_sample(spec, 100, seed=1)
    obs = scm.observed(spec, d)
    assert set(obs.names) == set(d.names) - set(spec.hidden)
    assert spec.hidden
