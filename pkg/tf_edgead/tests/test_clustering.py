import itertools

import numpy as np
import pytest

from tf_edgead.clustering import *

from .common import graph_from_letters, random_graph

FOUR_NODES = {"AB": 1.0, "CD": 2.0, "BC": 5.0, "AC": 6.0, "AD": 7.0, "BD": 8.0}


def _single_linkage(graph, k):
    """Merge the two closest clusters until ``k`` remain."""
    clusters = [{v} for v in graph.vertices]
    while len(clusters) > k:
        best = None
        for i, j in itertools.combinations(range(len(clusters)), 2):
            d = min(
                graph.weight(a, b) for a in clusters[i] for b in clusters[j]
            )
            if best is None or d < best[0]:
                best = (d, i, j)
        _, i, j = best
        clusters[i] = clusters[i] | clusters.pop(j)
    return {frozenset(c) for c in clusters}


def _kruskal_weight(graph, members):
    uf = UnionFind(members)
    ret = 0.0
    sub = graph.subgraph(members)
    for a, b, w in sorted(sub.edges(), key=lambda e: e[2]):
        if uf.find(a) != uf.find(b):
            uf.union(a, b)
            ret += w
    return ret


def test_union_find():
    uf = UnionFind("abcde")
    assert uf.union("a", "b") == "a"
    assert uf.union("c", "a") == "a"
    assert uf.size["a"] == 3
    assert uf.union("d", "e") == "d"
    assert uf.union("d", "c") == "a"
    assert uf.size == {"a": 5}
    assert uf.union("b", "e") == "a"
    assert uf.groups() == [set("abcde")]
    assert uf.forest == {k: "a" for k in "abcde"}


def test_cluster_example():
    graph = graph_from_letters(FOUR_NODES)
    cm = cluster_devices(graph, 2)
    assert cm.groups() == {frozenset("AB"), frozenset("CD")}
    assert cm.to_dict() == {"c0": ["A", "B"], "c1": ["C", "D"]}
    assert cm.cluster_of("D") == "c1"
    assert cluster_devices(graph, 4).groups() == {
        frozenset(i) for i in "ABCD"
    }
    assert cluster_devices(graph, 1).groups() == {frozenset("ABCD")}
    for k in [0, 5]:
        with pytest.raises(KOutOfRange):
            cluster_devices(graph, k)


def test_cluster_single_linkage():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        graph = random_graph(rng, n)
        k = int(rng.integers(1, n + 1))
        cm = cluster_devices(graph, k)
        assert len(cm) == k
        assert cm.devices == list(graph.vertices)
        assert cm.groups() == _single_linkage(graph, k)


def test_cluster_refinement():
    rng = np.random.default_rng(1)
    graph = random_graph(rng, 9)
    maps = [cluster_devices(graph, k) for k in range(1, 10)]
    for coarse, fine in zip(maps, maps[1:]):
        assert fine.refines(coarse)
        assert not coarse.refines(fine)


def test_cluster_map(tmp_path):
    cm = ClusterMap([{"x", "b"}, {"a"}, set()])
    assert len(cm) == 2
    assert cm.to_dict() == {"c0": ["a"], "c1": ["b", "x"]}
    assert cm.members("c1") == frozenset("bx")
    with pytest.raises(UnknownDevice):
        cm.cluster_of("z")
    with pytest.raises(ValueError):
        ClusterMap([{"a", "b"}, {"b"}])
    path = str(tmp_path / "clusters.yml")
    cm.save(path)
    assert ClusterMap.load(path) == cm


def test_plan_example():
    graph = graph_from_letters({"AB": 1.0, "BC": 2.0, "AC": 9.0})
    plan = plan_cluster_training(graph, {"C", "B", "A"})
    assert plan.root == "A"
    assert plan.steps == [("A", "B", 1.0), ("B", "C", 2.0)]
    assert plan.total_weight() == 3.0
    assert plan.source_of("C") == "B"
    assert plan.source_of("A") is None

    single = plan_cluster_training(graph, {"B"})
    assert single.root == "B"
    assert single.steps == []
    with pytest.raises(DisconnectedCluster):
        plan_cluster_training(graph, {"A", "Z"})
    with pytest.raises(DisconnectedCluster):
        ClusterPlan("A", [("B", "C", 1.0)])


def test_plan_spanning_tree():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(2, 10))
        graph = random_graph(rng, n)
        size = int(rng.integers(1, n + 1))
        members = set(rng.choice(graph.vertices, size, replace=False))
        plan = plan_cluster_training(graph, members)
        assert plan.devices == frozenset(members)
        assert len(plan.steps) == len(members) - 1
        reached = {plan.root}
        for s, t, w in plan.steps:
            assert s in reached
            assert t not in reached
            assert w == graph.weight(s, t)
            reached.add(t)
        assert plan.total_weight() == pytest.approx(
            _kruskal_weight(graph, members), abs=1e-9
        )
        if len(members) > 1:
            lightest = min(
                graph.subgraph(members).edges(), key=lambda e: e[2]
            )
            assert plan.root == lightest[0]


def test_training_plan(tmp_path):
    graph = graph_from_letters(FOUR_NODES)
    cm = cluster_devices(graph, 2)
    plan = TrainingPlan.build(graph, cm)
    assert list(plan) == ["c0", "c1"]
    assert plan["c0"].steps == [("A", "B", 1.0)]
    assert plan["c1"].root == "C"
    path = str(tmp_path / "plan.yml")
    plan.save(path)
    assert TrainingPlan.load(path) == plan


def test_reassign_new_device():
    graph = graph_from_letters(FOUR_NODES)
    cm = cluster_devices(graph, 2)
    grown = graph.with_device("E", {"A": 0.0, "B": 1.0, "C": 5.0, "D": 6.0})
    assert nearest_neighbor(grown, "E") == ("A", 0.0)
    new, action = reassign_device(grown, cm, "E")
    assert action == JOINED_EXISTING
    assert new.groups() == {frozenset("ABE"), frozenset("CD")}
    with pytest.raises(UnknownDevice):
        reassign_device(graph, cm, "E")


def test_reassign_drift():
    graph = graph_from_letters(FOUR_NODES)
    cm = cluster_devices(graph, 2)
    drifted = graph.with_device("B", {"A": 9.0, "C": 0.5, "D": 3.0})
    neighbor, _ = nearest_neighbor(drifted, "B")
    assert neighbor == "C"
    new, action = reassign_device(drifted, cm, "B")
    assert action == MOVED
    assert new.groups() == {frozenset("A"), frozenset("BCD")}

    same, action = reassign_device(graph, cm, "A")
    assert action == UNCHANGED
    assert same == cm


def test_remove_device():
    graph = graph_from_letters(FOUR_NODES)
    cm = cluster_devices(graph, 2)
    smaller = remove_device(cm, "D")
    assert smaller.groups() == {frozenset("AB"), frozenset("C")}
    with pytest.raises(UnknownDevice):
        remove_device(cm, "Z")
    assert nearest_neighbor(graph, "A", among={"C", "D"}) == ("C", 6.0)
    assert nearest_neighbor(graph, "A", among=set()) == (None, None)


def test_jaccard_change():
    assert jaccard_change("AB", "AB") == 0.0
    assert jaccard_change("AB", "CD") == 1.0
    assert jaccard_change("ABC", "AB") == pytest.approx(1 / 3)
    assert jaccard_change([], []) == 0.0
