import warnings

import numpy as np

from .data import DegenerateMetricWarning
from .errors import EdgeADError


class BinMismatch(EdgeADError, ValueError):
    pass


class NotNormalized(EdgeADError, ValueError):
    pass


def shared_binning(values, bins, name=None):
    """
    Equal width bin edges over the global min/max of ``values``.

    :param values: list of arrays, one per device
    :param bins: number of bins ``B >= 2``
    :return: ``(edges of length B+1, degenerate flag)``
    """
    if bins < 2:
        raise ValueError("bins must be >= 2, got {}".format(bins))
    lo = min(float(np.min(v)) for v in values)
    hi = max(float(np.max(v)) for v in values)
    if hi == lo:
        warnings.warn(
            "metric {} is constant, using a point mass".format(name),
            DegenerateMetricWarning,
        )
        return np.linspace(lo, lo + 1.0, bins + 1), True
    return np.linspace(lo, hi, bins + 1), False


class Hist1D:
    """Histogram with explicit ``binning`` (edges) and ``count``."""

    def __init__(self, binning, count):
        self.binning = np.asarray(binning, dtype=np.float64)
        self.count = np.asarray(count, dtype=np.float64)

    @property
    def bin_center(self):
        return (self.binning[:-1] + self.binning[1:]) / 2

    @property
    def bin_width(self):
        return self.binning[1:] - self.binning[:-1]

    def get_count(self):
        return np.sum(self.count)

    def __add__(self, other):
        if not np.array_equal(self.binning, other.binning):
            raise BinMismatch("need to be the same binning")
        return Hist1D(self.binning, self.count + other.count)

    @staticmethod
    def histogram(m, binning, clip=False):
        """
        Count ``m`` into ``binning``. With ``clip`` values outside the edges
        are moved into the outer bins.
        """
        m = np.asarray(m, dtype=np.float64).ravel()
        if clip:
            m = np.clip(m, binning[0], binning[-1])
        count, _ = np.histogram(m, bins=binning)
        return Hist1D(binning, count)

    def to_distribution(self):
        return MetricDistribution(self.binning, self.count / self.get_count())


class MetricDistribution:
    """
    Probability mass of one metric of one device over shared bins.

    :param bin_edges: strictly increasing, length ``B + 1``
    :param probabilities: non negative, length ``B``, sums to 1
    """

    def __init__(self, bin_edges, probabilities):
        self.bin_edges = np.asarray(bin_edges, dtype=np.float64)
        self.probabilities = np.asarray(probabilities, dtype=np.float64)
        if self.bin_edges.shape != (self.probabilities.shape[0] + 1,):
            raise BinMismatch(
                "{} edges for {} bins".format(
                    self.bin_edges.size, self.probabilities.size
                )
            )
        if not np.all(np.diff(self.bin_edges) > 0):
            raise BinMismatch("bin edges must be strictly increasing")
        check_probabilities(self.probabilities)

    def __len__(self):
        return self.probabilities.shape[0]

    def same_bins(self, other):
        return np.array_equal(self.bin_edges, other.bin_edges)


def check_probabilities(p, tol=1e-9):
    if np.any(p < 0):
        raise NotNormalized("negative probability")
    total = np.sum(p)
    if abs(total - 1.0) > tol:
        raise NotNormalized("probabilities sum to {!r}".format(float(total)))
