import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from asrcause import scm
from asrcause.discovery import (
    FCI,
    PC,
    DiscoveryConfig,
    fci,
    meek_closure,
    orient_v_structures,
    pc,
    pc_skeleton,
    possible_d_sep,
)
from asrcause.features import bin_outcomes
from asrcause.graph import GraphError, Mark, MixedGraph, SepsetMap

from .oracles import cpdag_oracle, random_dag, shd

COLLIDER = MixedGraph.from_directed(["X", "Y", "Z"], [("X", "Z"), ("Y", "Z")])
CHAIN = MixedGraph.from_directed(["X", "Y", "Z"], [("X", "Z"), ("Z", "Y")])


def oracle(dag, **kw):
    return DiscoveryConfig(oracle=dag, **kw)


@st.composite
def dags(draw, max_nodes=6):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(2, max_nodes))
    return random_dag(np.random.default_rng(seed), n, draw(st.sampled_from([0.2, 0.35, 0.5])))


@pytest.fixture(scope="module")
def fixture_sample():
    data, _ = bin_outcomes(scm.forward_sample(scm.load_fixture(), 10_000, seed=1))
    return data


# skeleton

def test_skeleton_collider_oracle():
    skel, seps = pc_skeleton(None, oracle(COLLIDER))
    assert set(skel.edges) == {("X", "Z"), ("Y", "Z")}
    assert seps.get("X", "Y") == frozenset()


def test_skeleton_complete_dag():
    dag = MixedGraph.from_directed(["A", "B", "C"], [("A", "B"), ("A", "C"), ("B", "C")])
    skel, seps = pc_skeleton(None, oracle(dag))
    assert set(skel.edges) == set(dag.edges) and len(seps) == 0


def test_skeleton_fixture_oracle():
    dag = scm.load_fixture().dag
    skel, seps = pc_skeleton(None, oracle(dag))
    assert set(skel.edges) == set(dag.edges)
    for a in dag.nodes:
        for b in dag.nodes:
            if a < b and not dag.is_adjacent(a, b):
                assert (a, b) in seps


def test_unbinned_outcome_rejected():
    raw = scm.forward_sample(scm.load_fixture(), 500, seed=1)
    with pytest.raises(ValueError, match="bin"):
        pc(raw, DiscoveryConfig())


def test_max_cond_set_caps_search():
    dag = MixedGraph.from_directed(["A", "B", "C", "D"], [("A", "D"), ("B", "D"), ("C", "D"), ("A", "B")])
    _, seps = pc_skeleton(None, oracle(dag, max_cond_set=0))
    assert all(len(s) == 0 for _, s in seps.items())


# orientation

def test_v_structure_examples():
    skel = MixedGraph.from_undirected(["X", "Y", "Z"], [("X", "Z"), ("Y", "Z")])
    seps = SepsetMap()
    seps.set("X", "Y", set())
    g = orient_v_structures(skel, seps)
    assert g.is_directed("X", "Z") and g.is_directed("Y", "Z")
    seps.set("X", "Y", {"Z"})
    assert orient_v_structures(skel, seps) == skel
    tri = MixedGraph.complete(["X", "Y", "Z"])
    assert orient_v_structures(tri, SepsetMap()) == tri


def test_conflicting_v_structures_left_undirected():
    skel = MixedGraph.from_undirected("ABCD", [("A", "B"), ("B", "C"), ("C", "D")])
    seps = SepsetMap()
    seps.set("A", "C", set())
    seps.set("B", "D", set())
    log = []
    g = orient_v_structures(skel, seps, log)
    assert g.is_directed("A", "B") and g.is_directed("D", "C")
    assert g.is_undirected("B", "C")
    assert any(e["event"] == "conflict" for e in log)


def test_meek_r1_and_unchanged_triangle():
    g = MixedGraph("XYZ", [("X", "Z", "tail", "arrow"), ("Z", "Y", "tail", "tail")])
    assert meek_closure(g).is_directed("Z", "Y")
    tri = MixedGraph.complete("XYZ")
    assert meek_closure(tri) == tri


def test_meek_r2():
    g = MixedGraph("abc", [("a", "b", "tail", "arrow"), ("b", "c", "tail", "arrow"), ("a", "c", "tail", "tail")])
    assert meek_closure(g).is_directed("a", "c")


def test_meek_r3():
    edges = [
        ("a", "b", "tail", "tail"), ("a", "c", "tail", "tail"), ("a", "d", "tail", "tail"),
        ("c", "b", "tail", "arrow"), ("d", "b", "tail", "arrow"),
    ]
    assert meek_closure(MixedGraph("abcd", edges)).is_directed("a", "b")


def test_meek_rejects_cycles_and_circles():
    cyc = MixedGraph.from_directed("ABC", [("A", "B"), ("B", "C"), ("C", "A")])
    with pytest.raises(GraphError):
        meek_closure(cyc)
    with pytest.raises(GraphError):
        meek_closure(MixedGraph("AB", [("A", "B", "circle", "arrow")]))


@given(dags())
def test_meek_idempotent_and_matches_equivalence_class(dag):
    out = pc(None, oracle(dag)).graph
    assert meek_closure(out) == out
    assert shd(out, cpdag_oracle(dag)) == 0
    assert out == scm_cpdag(dag)


def scm_cpdag(dag):
    # the CPDAG scm-sim reports for the same DAG
    nodes = [{"name": n, "levels": ["0", "1"], "cpt": {}} for n in dag.nodes]
    spec = {"name": "r", "seed": 1, "nodes": nodes, "edges": [list(e) for e in dag.directed_edges()]}
    for node in spec["nodes"]:
        pa = sorted(a for a, b in dag.directed_edges() if b == node["name"])
        import itertools

        for combo in itertools.product(["0", "1"], repeat=len(pa)):
            node["cpt"][",".join(combo)] = [0.5, 0.5]
    return scm.true_cpdag(scm.ScmSpec.from_json(spec))


# full algorithms with an oracle

def test_pc_oracle_examples():
    g = pc(None, oracle(CHAIN)).graph
    assert g.is_undirected("X", "Z") and g.is_undirected("Z", "Y")
    g = pc(None, oracle(COLLIDER)).graph
    assert g == COLLIDER


def test_fci_collider_oracle():
    g = fci(None, oracle(COLLIDER, algorithm="fci")).graph
    assert g.mark("X", "Z") is Mark.ARROW and g.mark("Z", "X") is Mark.CIRCLE
    assert g.mark("Y", "Z") is Mark.ARROW and g.mark("Z", "Y") is Mark.CIRCLE


@given(dags())
def test_fci_adjacencies_equal_pc_without_latents(dag):
    a = pc(None, oracle(dag)).graph
    b = fci(None, oracle(dag, algorithm="fci")).graph
    assert set(a.edges) == set(b.edges)


def test_possible_d_sep_contains_adjacent_and_collider_paths():
    pag = MixedGraph("ABCD", [("A", "B", "circle", "arrow"), ("C", "B", "circle", "arrow"), ("C", "D", "circle", "circle")])
    pds = possible_d_sep(pag, "A")
    assert {"B", "C"} <= pds and "D" not in pds


def test_fci_latent_confounder():
    spec = scm.load_fixture("latent_confounder")
    data = scm.observed(spec, scm.forward_sample(spec, 10_000, seed=3))
    g = fci(data, DiscoveryConfig(algorithm="fci")).graph
    assert g.is_adjacent("A", "B") and Mark.TAIL not in g.edges[("A", "B")]


# data-driven behaviour

def test_log_events_and_sepsets(fixture_sample):
    out = pc(fixture_sample, DiscoveryConfig())
    removed = [e for e in out.log if e["event"] == "remove"]
    assert removed
    for e in removed:
        assert set(e) >= {"event", "x", "y", "sepset", "p"}
        assert (e["x"], e["y"]) in out.sepsets
        assert not out.graph.is_adjacent(e["x"], e["y"])
    assert set(out.graph.nodes) == set(fixture_sample.discrete_names)


def test_determinism_order_independence_and_threads(fixture_sample):
    base = pc(fixture_sample, DiscoveryConfig())
    shuffled = fixture_sample.select(list(reversed(fixture_sample.names)))
    again = pc(shuffled, DiscoveryConfig())
    threaded = pc(fixture_sample, DiscoveryConfig(n_jobs=3))
    assert base.graph == again.graph == threaded.graph
    assert base.log == again.log == threaded.log
    f1 = fci(fixture_sample, DiscoveryConfig(algorithm="fci"))
    f2 = fci(shuffled, DiscoveryConfig(algorithm="fci", n_jobs=2))
    assert f1.graph == f2.graph and f1.log == f2.log


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_skeleton_monotone_in_alpha(seed):
    data, _ = bin_outcomes(scm.forward_sample(scm.load_fixture(), 5_000, seed=seed))
    edges = [set(pc_skeleton(data, DiscoveryConfig(ci=_ci(a)))[0].edges) for a in (0.001, 0.01, 0.05, 0.2)]
    for lo, hi in zip(edges, edges[1:]):
        assert lo <= hi


def _ci(alpha):
    from asrcause.citest import CiTestConfig

    return CiTestConfig(alpha=alpha)


def test_config_validation():
    with pytest.raises(ValueError):
        DiscoveryConfig(algorithm="ges")
    with pytest.raises(ValueError):
        DiscoveryConfig(max_cond_set=-1)
    with pytest.raises(ValueError):
        DiscoveryConfig(oracle=MixedGraph.from_undirected("AB", [("A", "B")]))


# estimators

def test_estimator_api(fixture_sample):
    est = PC(alpha=0.01)
    assert clone(est).get_params()["alpha"] == 0.01
    est.set_params(max_cond_set=2)
    est.fit(fixture_sample)
    assert est.graph_ == pc(fixture_sample, est.config()).graph
    assert FCI(oracle=COLLIDER).fit().graph_ == fci(None, oracle(COLLIDER, algorithm="fci")).graph


def test_estimator_accepts_dataframe():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, 3000)
    y = rng.integers(0, 2, 3000)
    z = np.where(rng.random(3000) < 0.9, x | y, 1 - (x | y))
    df = pd.DataFrame({"x": x, "y": y, "z": z})
    g = PC().fit(df).graph_
    assert g.is_directed("x", "z") and g.is_directed("y", "z")
    with pytest.raises(ValueError):
        PC().fit(None)
