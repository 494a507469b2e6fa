"""
Device clustering over a :class:`~tf_edgead.similarity.SimilarityGraph` and
the per-cluster transfer order used by intra-cluster transfer learning.
"""
import heapq
import logging

from .errors import EdgeADError
from .utils import load_config_file, save_yaml_file

logger = logging.getLogger(__name__)

JOINED_EXISTING = "joined_existing"
MOVED = "moved"
UNCHANGED = "unchanged"


class KOutOfRange(EdgeADError, ValueError):
    pass


class DisconnectedCluster(EdgeADError, ValueError):
    pass


class UnknownDevice(EdgeADError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, items=()):
        self.forest = {}
        self.size = {}
        for i in items:
            self.add(i)

    def add(self, k):
        if k not in self.forest:
            self.forest[k] = k
            self.size[k] = 1
        return k

    def union(self, a, b):
        root_a = self.find(a)
        root_b = self.find(b)
        if root_a == root_b:
            return root_a
        if self.size[root_a] < self.size[root_b]:
            root_a, root_b = root_b, root_a
        self.forest[root_b] = root_a
        self.size[root_a] += self.size.pop(root_b)
        return root_a

    def find(self, k):
        self.add(k)
        root = k
        while root != self.forest[root]:
            root = self.forest[root]
        # path compression
        node = k
        while node != root:
            self.forest[node], node = root, self.forest[node]
        return root

    def groups(self):
        ret = {}
        for k in self.forest:
            ret.setdefault(self.find(k), set()).add(k)
        return list(ret.values())


class ClusterMap:
    """
    Partition of the devices. Cluster ids are ``c0, c1, ...`` numbered by
    the smallest member id, so equal partitions get equal ids.
    """

    def __init__(self, groups):
        groups = [frozenset(g) for g in groups if len(g) > 0]
        seen = set()
        for g in groups:
            if seen & g:
                raise ValueError("clusters overlap on {}".format(seen & g))
            seen |= g
        groups.sort(key=min)
        self.clusters = {"c{}".format(i): g for i, g in enumerate(groups)}
        self._owner = {d: c for c, g in self.clusters.items() for d in g}

    def __len__(self):
        return len(self.clusters)

    def __eq__(self, other):
        if not isinstance(other, ClusterMap):
            return False
        return self.groups() == other.groups()

    def __repr__(self):
        return "ClusterMap({})".format(
            {k: sorted(v) for k, v in self.clusters.items()}
        )

    @property
    def devices(self):
        return sorted(self._owner)

    def groups(self):
        return set(self.clusters.values())

    def cluster_of(self, device_id):
        if device_id not in self._owner:
            raise UnknownDevice(device_id)
        return self._owner[device_id]

    def members(self, cluster_id):
        return self.clusters[cluster_id]

    def refines(self, other):
        """Every cluster of ``self`` lies inside a cluster of ``other``."""
        return all(any(g <= h for h in other.groups()) for g in self.groups())

    def to_dict(self):
        return {k: sorted(v) for k, v in self.clusters.items()}

    def save(self, path):
        save_yaml_file(path, {"clusters": self.to_dict()})

    @staticmethod
    def load(path):
        dic = load_config_file(path)
        return ClusterMap(dic["clusters"].values())


def cluster_devices(graph, k):
    """
    Agglomerate devices over the similarity graph.

    Starting from singletons, edges are taken in order of increasing
    weight (ties by device id pair); an edge joining two different clusters
    merges them. Stops when ``k`` clusters remain, which is single linkage
    clustering cut at ``k``.
    """
    n = len(graph)
    if not 1 <= k <= n:
        raise KOutOfRange("k must be in [1, {}], got {}".format(n, k))
    uf = UnionFind(graph.vertices)
    n_clusters = n
    for a, b, _ in sorted(graph.edges(), key=lambda e: (e[2], e[0], e[1])):
        if n_clusters <= k:
            break
        if uf.find(a) == uf.find(b):
            continue
        uf.union(a, b)
        n_clusters -= 1
    ret = ClusterMap(uf.groups())
    logger.info("clustered %d devices into %d clusters", n, len(ret))
    return ret


class ClusterPlan:
    """
    Transfer order inside one cluster.

    :param root: device trained from scratch
    :param steps: list of ``(source, target, weight)``
    """

    def __init__(self, root, steps=()):
        self.root = root
        self.steps = [(s, t, float(w)) for s, t, w in steps]
        reached = {root}
        for s, t, _ in self.steps:
            if s not in reached or t in reached:
                raise DisconnectedCluster(
                    "step {} -> {} is not a tree step".format(s, t)
                )
            reached.add(t)
        self.devices = frozenset(reached)

    def __eq__(self, other):
        return self.root == other.root and self.steps == other.steps

    def total_weight(self):
        return sum(w for _, _, w in self.steps)

    def source_of(self, device_id):
        for s, t, _ in self.steps:
            if t == device_id:
                return s
        return None

    def to_dict(self):
        return {
            "root": self.root,
            "steps": [
                {"source": s, "target": t, "weight": w}
                for s, t, w in self.steps
            ],
        }

    @staticmethod
    def from_dict(dic):
        return ClusterPlan(
            dic["root"],
            [(i["source"], i["target"], i["weight"]) for i in dic["steps"]],
        )


def plan_cluster_training(graph, cluster):
    """
    Prim style spanning tree of ``cluster``.

    The root is the smaller id of the cluster's lightest edge. Each step
    takes the lightest edge with exactly one visited endpoint and emits
    ``(visited, unvisited, weight)``.
    """
    cluster = sorted(cluster)
    if not cluster:
        raise ValueError("empty cluster")
    for i in cluster:
        if i not in graph:
            raise DisconnectedCluster("{} is not in the graph".format(i))
    if len(cluster) == 1:
        return ClusterPlan(cluster[0])
    sub = graph.subgraph(cluster)
    a, b, _ = min(sub.edges(), key=lambda e: (e[2], e[0], e[1]))
    root = min(a, b)
    visited = {root}
    heap = [(sub.weight(root, j), root, j) for j in cluster if j != root]
    heapq.heapify(heap)
    steps = []
    while len(visited) < len(cluster):
        if not heap:
            raise DisconnectedCluster("cluster is not connected")
        w, s, t = heapq.heappop(heap)
        if t in visited:
            continue
        visited.add(t)
        steps.append((s, t, w))
        for j in cluster:
            if j not in visited:
                heapq.heappush(heap, (sub.weight(t, j), t, j))
    return ClusterPlan(root, steps)


class TrainingPlan:
    """Dictionary ``cluster_id -> ClusterPlan``."""

    def __init__(self, plans):
        self.plans = dict(plans)

    def __getitem__(self, cluster_id):
        return self.plans[cluster_id]

    def __iter__(self):
        return iter(sorted(self.plans))

    def __len__(self):
        return len(self.plans)

    def __eq__(self, other):
        return self.plans == other.plans

    def items(self):
        return sorted(self.plans.items())

    @staticmethod
    def build(graph, cluster_map):
        return TrainingPlan(
            {
                c: plan_cluster_training(graph, g)
                for c, g in cluster_map.clusters.items()
            }
        )

    def save(self, path):
        save_yaml_file(
            path, {"plans": {c: p.to_dict() for c, p in self.items()}}
        )

    @staticmethod
    def load(path):
        dic = load_config_file(path)
        return TrainingPlan(
            {c: ClusterPlan.from_dict(p) for c, p in dic["plans"].items()}
        )


def nearest_neighbor(graph, device_id, among=None):
    """Closest other device, ties by id; ``among`` restricts candidates."""
    if device_id not in graph:
        raise UnknownDevice(device_id)
    for other, w in graph.neighbors(device_id):
        if among is None or other in among:
            return other, w
    return None, None


def reassign_device(graph, cluster_map, device_id):
    """
    Put ``device_id`` into the cluster of its nearest neighbor.

    :return: ``(ClusterMap, action)`` with action one of
        ``joined_existing`` (device was not clustered), ``moved`` or
        ``unchanged``
    """
    if device_id not in graph:
        raise UnknownDevice(device_id)
    known = set(cluster_map.devices) - {device_id}
    neighbor, _ = nearest_neighbor(graph, device_id, among=known)
    if neighbor is None:
        raise UnknownDevice(
            "no clustered neighbor for {}".format(device_id)
        )
    target = cluster_map.members(cluster_map.cluster_of(neighbor))
    groups = [g - {device_id} for g in cluster_map.groups()]
    if device_id not in cluster_map.devices:
        action = JOINED_EXISTING
    elif device_id in target:
        return cluster_map, UNCHANGED
    else:
        action = MOVED
    groups = [g | {device_id} if neighbor in g else g for g in groups]
    return ClusterMap(groups), action


def remove_device(cluster_map, device_id):
    cluster_map.cluster_of(device_id)
    return ClusterMap(g - {device_id} for g in cluster_map.groups())


def jaccard_change(before, after):
    """:math:`1 - |A \\cap B| / |A \\cup B|` of two member sets."""
    before, after = set(before), set(after)
    union = before | after
    if not union:
        return 0.0
    return 1.0 - len(before & after) / len(union)
