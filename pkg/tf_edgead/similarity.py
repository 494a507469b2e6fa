"""
Distribution based similarity between edge devices.

Every device is described by one histogram per representative metric; the
bin edges of a metric are shared by all devices. The distance of two
devices is the L2 norm of the per metric Jensen-Shannon distances, natural
logarithm throughout, so a single metric contributes at most
``sqrt(ln 2)``.
"""
import itertools
import logging

import numpy as np
from scipy.special import rel_entr

from .data import ScaledData, scale_by_range
from .errors import EdgeADError
from .histogram import (
    BinMismatch,
    Hist1D,
    MetricDistribution,
    NotNormalized,
    check_probabilities,
    shared_binning,
)
from .utils import atomic_write_text, format_float

logger = logging.getLogger(__name__)

__all__ = [
    "BinMismatch",
    "LengthMismatch",
    "MetricDistribution",
    "NotNormalized",
    "SimilarityGraph",
    "SimilarityProfile",
    "TooFewDevices",
    "build_similarity_graph",
    "estimate_distributions",
    "js_distance",
    "js_divergence",
    "kl_divergence",
    "sim_dist",
]


class LengthMismatch(EdgeADError, ValueError):
    pass


class TooFewDevices(EdgeADError, ValueError):
    pass


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise LengthMismatch(
            "distributions of shape {} and {}".format(p.shape, q.shape)
        )
    check_probabilities(p)
    check_probabilities(q)
    return p, q


def kl_divergence(p, q):
    """
    :math:`\\sum_i p_i \\ln(p_i / q_i)`, zero terms for :math:`p_i = 0`,
    ``inf`` when some :math:`q_i = 0 < p_i`.
    """
    p, q = _check_pair(p, q)
    return float(np.sum(rel_entr(p, q)))


def _js(p, q):
    m = (p + q) / 2
    return 0.5 * np.sum(rel_entr(p, m)) + 0.5 * np.sum(rel_entr(q, m))


def js_divergence(p, q):
    """Jensen-Shannon divergence, in :math:`[0, \\ln 2]`."""
    p, q = _check_pair(p, q)
    return float(_js(p, q))


def js_distance(p, q):
    p, q = _check_pair(p, q)
    return float(np.sqrt(max(_js(p, q), 0.0)))


def sim_dist(dist_i, dist_j):
    """
    Similarity distance of two devices.

    :param dist_i: list of :class:`MetricDistribution`, one per metric
    :param dist_j: same for the other device, on the same bins
    :return: :math:`\\sqrt{\\sum_h JSD_h^2}`
    """
    if len(dist_i) != len(dist_j):
        raise BinMismatch(
            "{} metrics against {}".format(len(dist_i), len(dist_j))
        )
    total = 0.0
    for a, b in zip(dist_i, dist_j):
        if not a.same_bins(b):
            raise BinMismatch("distributions use different bin edges")
        total += max(_js(a.probabilities, b.probabilities), 0.0)
    return float(np.sqrt(total))


def _edge_key(a, b):
    if a == b:
        raise ValueError("no self edge for {}".format(a))
    return (a, b) if a < b else (b, a)


class SimilarityGraph:
    """
    Complete undirected graph over devices weighted by :func:`sim_dist`.

    :param vertices: device ids
    :param weights: dictionary ``(device_a, device_b) -> weight`` holding
        each unordered pair once
    """

    def __init__(self, vertices, weights):
        self.vertices = tuple(sorted(vertices))
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError("duplicated vertices")
        self._weights = {}
        for (a, b), w in weights.items():
            w = float(w)
            if not np.isfinite(w) or w < 0:
                raise ValueError(
                    "edge {}-{} has weight {!r}".format(a, b, w)
                )
            self._weights[_edge_key(a, b)] = w
        expected = len(self.vertices) * (len(self.vertices) - 1) // 2
        known = set(self.vertices)
        if len(self._weights) != expected or any(
            a not in known or b not in known for a, b in self._weights
        ):
            raise ValueError("similarity graph must be complete")

    def __len__(self):
        return len(self.vertices)

    def __contains__(self, device_id):
        return device_id in self.vertices

    def __eq__(self, other):
        return (
            isinstance(other, SimilarityGraph)
            and self.vertices == other.vertices
            and self._weights == other._weights
        )

    def weight(self, a, b):
        return self._weights[_edge_key(a, b)]

    def edges(self):
        """``[(a, b, weight)]`` with ``a < b``, lexicographically sorted."""
        return [(a, b, w) for (a, b), w in sorted(self._weights.items())]

    def neighbors(self, device_id):
        """Other devices ordered by ``(weight, id)``."""
        if device_id not in self.vertices:
            raise KeyError(device_id)
        ret = [
            (self.weight(device_id, i), i)
            for i in self.vertices
            if i != device_id
        ]
        return [(i, w) for w, i in sorted(ret)]

    def subgraph(self, devices):
        devices = set(devices)
        return SimilarityGraph(
            devices,
            {
                (a, b): w
                for (a, b), w in self._weights.items()
                if a in devices and b in devices
            },
        )

    def without(self, device_id):
        return self.subgraph(i for i in self.vertices if i != device_id)

    def with_device(self, device_id, weights):
        """
        Copy with ``device_id`` (re)connected to every other vertex.

        :param weights: dictionary ``other device -> weight``
        """
        ret = dict(self._weights)
        for key in list(ret):
            if device_id in key:
                del ret[key]
        for other, w in weights.items():
            ret[_edge_key(device_id, other)] = w
        return SimilarityGraph(set(self.vertices) | {device_id}, ret)

    def to_matrix(self):
        n = len(self.vertices)
        idx = {v: i for i, v in enumerate(self.vertices)}
        ret = np.zeros((n, n))
        for (a, b), w in self._weights.items():
            ret[idx[a], idx[b]] = ret[idx[b], idx[a]] = w
        return ret

    def to_text(self):
        lines = [
            "{},{},{}".format(a, b, format_float(w))
            for a, b, w in self.edges()
        ]
        return "".join(i + "\n" for i in lines)

    def save(self, path):
        atomic_write_text(path, self.to_text())

    @staticmethod
    def from_text(text, vertices=None):
        weights = {}
        found = set()
        for i, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 3:
                raise ValueError("bad edge line {}: {!r}".format(i + 1, line))
            a, b, w = parts
            weights[(a, b)] = float(w)
            found.update((a, b))
        if vertices is None:
            vertices = found
        return SimilarityGraph(vertices, weights)

    @staticmethod
    def load(path):
        with open(path) as f:
            return SimilarityGraph.from_text(f.read())


def estimate_distributions(scaled_data, bins=100):
    """
    Histograms of every device's scaled train values.

    :param scaled_data: :class:`tf_edgead.data.ScaledData`
    :param bins: number of equal width bins shared by all devices
    :return: ``(list of bin edges per metric,
        dictionary device_id -> list of MetricDistribution)``
    """
    ids = scaled_data.device_ids
    n_metrics = len(scaled_data.indices)
    edges = []
    for h in range(n_metrics):
        binning, _ = shared_binning(
            [scaled_data.values[i][h] for i in ids],
            bins,
            scaled_data.indices[h],
        )
        edges.append(binning)
    dists = {
        i: [
            Hist1D.histogram(scaled_data.values[i][h], edges[h])
            .to_distribution()
            for h in range(n_metrics)
        ]
        for i in ids
    }
    return edges, dists


class SimilarityProfile:
    """
    Frozen scaling statistics, shared bins and per device distributions.

    Devices added later are scaled with the frozen statistics and counted
    into the frozen bins; out of range values fall into the outer bins.
    """

    def __init__(self, scaled, edges, distributions):
        self.scaled = scaled
        self.edges = [np.asarray(i, dtype=np.float64) for i in edges]
        self.distributions = dict(distributions)

    @staticmethod
    def fit(datasets, subset, bins=100, full_minmax=False):
        if len(datasets) < 2:
            raise TooFewDevices(
                "need at least 2 devices, got {}".format(len(datasets))
            )
        scaled = scale_by_range(datasets, subset, full_minmax)
        edges, dists = estimate_distributions(scaled, bins)
        return SimilarityProfile(scaled, edges, dists)

    @property
    def device_ids(self):
        return sorted(self.distributions)

    @property
    def bins(self):
        return self.edges[0].shape[0] - 1

    def distributions_of(self, dataset):
        x = self.scaled.transform(dataset)
        return [
            Hist1D.histogram(x[h], self.edges[h], clip=True).to_distribution()
            for h in range(len(self.edges))
        ]

    def with_device(self, dataset):
        """New profile with ``dataset`` added or replaced."""
        dists = dict(self.distributions)
        dists[dataset.device_id] = self.distributions_of(dataset)
        return SimilarityProfile(self.scaled, self.edges, dists)

    def without_device(self, device_id):
        if device_id not in self.distributions:
            raise KeyError(device_id)
        dists = dict(self.distributions)
        del dists[device_id]
        return SimilarityProfile(self.scaled, self.edges, dists)

    def edge_weights(self, device_id):
        """``other device -> sim_dist`` for one device."""
        mine = self.distributions[device_id]
        return {
            i: sim_dist(mine, d)
            for i, d in self.distributions.items()
            if i != device_id
        }

    def graph(self):
        ids = self.device_ids
        if len(ids) < 2:
            raise TooFewDevices("need at least 2 devices")
        weights = {
            (a, b): sim_dist(self.distributions[a], self.distributions[b])
            for a, b in itertools.combinations(ids, 2)
        }
        logger.info(
            "similarity graph over %d devices, %d edges",
            len(ids),
            len(weights),
        )
        return SimilarityGraph(ids, weights)

    def save(self, path):
        ids = self.device_ids
        probs = np.array(
            [[d.probabilities for d in self.distributions[i]] for i in ids]
        )
        with open(path, "wb") as f:
            np.savez(
                f,
                device_ids=np.array(ids, dtype=str),
                indices=np.array(self.scaled.indices, dtype=np.int64),
                mins=self.scaled.mins,
                ranges=self.scaled.ranges,
                full_minmax=np.array(self.scaled.full_minmax),
                edges=np.array(self.edges),
                probabilities=probs,
            )

    @staticmethod
    def load(path):
        with np.load(path, allow_pickle=False) as f:
            scaled = ScaledData(
                {},
                [int(i) for i in f["indices"]],
                f["mins"],
                f["ranges"],
                bool(f["full_minmax"]),
            )
            edges = list(f["edges"])
            dists = {
                str(i): [
                    MetricDistribution(e, p) for e, p in zip(edges, probs)
                ]
                for i, probs in zip(f["device_ids"], f["probabilities"])
            }
        return SimilarityProfile(scaled, edges, dists)


def build_similarity_graph(datasets, subset, bins=100, full_minmax=False):
    """
    Complete similarity graph: scale the representative metrics by their
    global range, histogram them on shared bins and weight every pair of
    devices by :func:`sim_dist`.
    """
    return SimilarityProfile.fit(datasets, subset, bins, full_minmax).graph()
