"""
Per-device datasets and the preprocessing applied to them.

A device's data is kept as matrices of shape ``(M metrics, T timesteps)``.
On disk the SMD convention is used: one comma separated row per timestep,
no header, one file per device, and an optional label file holding one
integer per line.

.. code::

    <root>/train/<device>.txt
    <root>/test/<device>.txt
    <root>/test_label/<device>.txt

"""
import logging
import os
import random
import warnings

import numpy as np

from .config import get_config, registry
from .errors import EdgeADError, EdgeADWarning
from .tensorflow_wrapper import tf
from .utils import atomic_write_text, format_float, sha256_path

logger = logging.getLogger(__name__)

INGEST_LAYOUT = "ingest_layout"
_register_layout = registry(INGEST_LAYOUT, "layout")

_MISSING_TOKENS = ("", "nan", "na", "null")
_DATA_SUFFIXES = (".txt", ".csv")


class MissingFile(EdgeADError, FileNotFoundError):
    pass


class RaggedRows(EdgeADError, ValueError):
    pass


class NonNumeric(EdgeADError, ValueError):
    pass


class MissingValues(EdgeADError, ValueError):
    pass


class LabelMismatch(EdgeADError, ValueError):
    pass


class HeterogeneousSchema(EdgeADError, ValueError):
    pass


class EmptySelection(EdgeADError, ValueError):
    pass


class WindowTooLong(EdgeADError, ValueError):
    pass


class DegenerateMetricWarning(EdgeADWarning):
    pass


class FilledGapsWarning(EdgeADWarning):
    pass


def set_random_seed(seed):
    """
    set random seed for random, numpy and tensorflow
    """
    np.random.seed(seed)
    tf.random.set_seed(seed)
    random.seed(seed)


def _readonly(a):
    a = np.array(a, dtype=get_config("dtype"))
    a.flags.writeable = False
    return a


class DeviceDataset:
    """
    Data collected from one edge device.

    :param device_id: Name of the device, usually the file stem.
    :param train: Array ``(M, T_train)`` of normal behaviour.
    :param test: Optional array ``(M, T_test)``.
    :param test_labels: Optional 0/1 vector of length ``T_test``.
    :param metric_names: Unique names of the ``M`` metrics.
    :param provenance: Dictionary describing how the data was obtained.
    """

    def __init__(
        self,
        device_id,
        train,
        test=None,
        test_labels=None,
        metric_names=None,
        provenance=None,
    ):
        self.device_id = str(device_id)
        self.train = _readonly(train)
        if self.train.ndim != 2:
            raise HeterogeneousSchema(
                "{}: train must be a matrix, got shape {}".format(
                    device_id, self.train.shape
                )
            )
        if not np.all(np.isfinite(self.train)):
            raise MissingValues(
                "{}: train split has missing values".format(device_id)
            )
        n_metrics = self.train.shape[0]
        if metric_names is None:
            metric_names = [str(i) for i in range(n_metrics)]
        metric_names = [str(i) for i in metric_names]
        if len(metric_names) != n_metrics:
            raise HeterogeneousSchema(
                "{}: {} metric names for {} metrics".format(
                    device_id, len(metric_names), n_metrics
                )
            )
        if len(set(metric_names)) != n_metrics:
            raise HeterogeneousSchema(
                "{}: metric names are not unique".format(device_id)
            )
        self.metric_names = tuple(metric_names)
        self.test = None if test is None else _readonly(test)
        if self.test is not None and self.test.shape[0] != n_metrics:
            raise HeterogeneousSchema(
                "{}: test has {} metrics, train has {}".format(
                    device_id, self.test.shape[0], n_metrics
                )
            )
        self.test_labels = None
        if test_labels is not None:
            if self.test is None:
                raise LabelMismatch(
                    "{}: labels given without a test split".format(device_id)
                )
            labels = np.asarray(test_labels)
            if labels.shape != (self.test.shape[1],):
                raise LabelMismatch(
                    "{}: {} labels for {} test timesteps".format(
                        device_id, labels.size, self.test.shape[1]
                    )
                )
            if not np.all((labels == 0) | (labels == 1)):
                raise LabelMismatch(
                    "{}: labels must be 0 or 1".format(device_id)
                )
            labels = labels.astype(np.int64)
            labels.flags.writeable = False
            self.test_labels = labels
        self.provenance = dict(provenance or {})

    def __repr__(self):
        return "DeviceDataset({!r}, M={}, T_train={}, T_test={})".format(
            self.device_id,
            self.n_metrics,
            self.train.shape[1],
            None if self.test is None else self.test.shape[1],
        )

    @property
    def n_metrics(self):
        return self.train.shape[0]

    def split(self, name):
        """Return the ``train`` or ``test`` matrix."""
        if name == "train":
            return self.train
        if name == "test":
            if self.test is None:
                raise MissingFile(
                    "{} has no test split".format(self.device_id)
                )
            return self.test
        raise ValueError("unknown split {}".format(name))

    def scaled(self, factor):
        """Copy with every value multiplied by ``factor``."""
        return DeviceDataset(
            self.device_id,
            self.train * factor,
            None if self.test is None else self.test * factor,
            self.test_labels,
            self.metric_names,
            self.provenance,
        )

    def renamed(self, device_id):
        return DeviceDataset(
            device_id,
            self.train,
            self.test,
            self.test_labels,
            self.metric_names,
            self.provenance,
        )


def register_layout(name=None, f=None):
    """register a dataset directory layout

    :params name: layout name used in configuration
    :params f: function ``(root, fill_missing) -> list of DeviceDataset``
    """
    return _register_layout(name, f)


def _forward_fill(values):
    """Forward fill NaN along time (axis 0); leading gaps take the first
    observed value."""
    mask = np.isnan(values)
    if not mask.any():
        return values, 0
    if mask.all(axis=0).any():
        raise MissingValues("a column has no observed value")
    n_rows = values.shape[0]
    idx = np.where(~mask, np.arange(n_rows)[:, None], 0)
    np.maximum.accumulate(idx, axis=0, out=idx)
    filled = values[idx, np.arange(values.shape[1])[None, :]]
    first = np.argmax(~mask, axis=0)
    lead = np.arange(n_rows)[:, None] < first[None, :]
    filled = np.where(lead, values[first, np.arange(values.shape[1])], filled)
    return filled, int(mask.sum())


def load_metric_file(fname, fill_missing=False):
    """
    Load one comma separated file of shape ``(T, M)``.

    :param fname: File name.
    :param fill_missing: forward fill empty or ``nan`` cells instead of
        raising :class:`MissingValues`.
    :return: ``(array (T, M), number of filled cells)``
    """
    with open(fname) as f:
        rows = [line.strip().split(",") for line in f if line.strip()]
    if not rows:
        raise MissingFile("{} is empty".format(fname))
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(
                "{}: row {} has {} columns, expected {}".format(
                    fname, i + 1, len(row), width
                )
            )
    cells = np.char.strip(np.array(rows, dtype=str))
    missing = np.isin(np.char.lower(cells), _MISSING_TOKENS)
    cells[missing] = "nan"
    try:
        values = cells.astype(np.float64)
    except ValueError:
        for (i, j), cell in np.ndenumerate(cells):
            try:
                float(cell)
            except ValueError:
                raise NonNumeric(
                    "{}: row {} column {}: {!r}".format(
                        fname, i + 1, j + 1, str(cell)
                    )
                )
        raise
    n_filled = 0
    if missing.any():
        if not fill_missing:
            raise MissingValues(
                "{}: {} missing cells (set fill_missing to forward "
                "fill)".format(fname, int(missing.sum()))
            )
        values, n_filled = _forward_fill(values)
        warnings.warn(
            "{}: forward filled {} cells".format(fname, n_filled),
            FilledGapsWarning,
        )
    return values, n_filled


def load_label_file(fname):
    values, _ = load_metric_file(fname)
    if values.shape[1] != 1:
        raise RaggedRows("{}: labels need one value per line".format(fname))
    return values[:, 0]


def _list_device_files(dirname):
    if not os.path.isdir(dirname):
        return {}
    ret = {}
    for name in sorted(os.listdir(dirname)):
        stem, ext = os.path.splitext(name)
        if ext in _DATA_SUFFIXES and not name.startswith("."):
            ret[stem] = os.path.join(dirname, name)
    return ret


def _read_device(device_id, train_file, test_file, label_file, fill_missing):
    train, n_train = load_metric_file(train_file, fill_missing)
    test, n_test, labels = None, 0, None
    if test_file is not None:
        test, n_test = load_metric_file(test_file, fill_missing)
        if train.shape[1] != test.shape[1]:
            raise HeterogeneousSchema(
                "{}: train has {} columns, test has {}".format(
                    device_id, train.shape[1], test.shape[1]
                )
            )
        if label_file is not None:
            labels = load_label_file(label_file)
    provenance = {"train_file": train_file, "filled_cells": n_train + n_test}
    if test_file is not None:
        provenance["test_file"] = test_file
    return DeviceDataset(
        device_id,
        train.T,
        None if test is None else test.T,
        labels,
        provenance=provenance,
    )


@register_layout("smd_like")
def _ingest_smd_like(root, fill_missing=False):
    train_files = _list_device_files(os.path.join(root, "train"))
    if not train_files:
        raise MissingFile("no device files in {}".format(root + "/train"))
    test_files = _list_device_files(os.path.join(root, "test"))
    label_files = _list_device_files(os.path.join(root, "test_label"))
    ret = []
    for device_id, train_file in train_files.items():
        test_file = test_files.get(device_id)
        label_file = label_files.get(device_id)
        if test_file is not None and label_file is None:
            raise MissingFile(
                "{}: test file without test_label file".format(device_id)
            )
        ret.append(
            _read_device(
                device_id, train_file, test_file, label_file, fill_missing
            )
        )
    return ret


@register_layout("single_dir")
def _ingest_single_dir(root, fill_missing=False):
    files = _list_device_files(root)
    if not files:
        raise MissingFile("no device files in {}".format(root))
    return [
        _read_device(device_id, fname, None, None, fill_missing)
        for device_id, fname in files.items()
    ]


def ingest_dataset(root_path, layout="smd_like", fill_missing=False):
    """
    Read every device of a dataset directory.

    :param root_path: dataset root
    :param layout: ``smd_like`` or ``single_dir`` (or a registered layout)
    :param fill_missing: forward fill gaps instead of rejecting them
    :return: list of :class:`DeviceDataset` sorted by device id
    """
    layouts = get_config(INGEST_LAYOUT)
    if layout not in layouts:
        raise ValueError("unknown layout {}".format(layout))
    if not os.path.isdir(root_path):
        raise MissingFile("{} is not a directory".format(root_path))
    datasets = layouts[layout](root_path, fill_missing=fill_missing)
    datasets = sorted(datasets, key=lambda d: d.device_id)
    logger.info("ingested %d devices from %s", len(datasets), root_path)
    return datasets


def _write_matrix(fname, matrix):
    lines = [",".join(format_float(v) for v in row) for row in matrix.T]
    atomic_write_text(fname, "\n".join(lines) + "\n")


def save_dataset(dataset, root, layout="smd_like"):
    """Write ``dataset`` back in the text layout read by
    :func:`ingest_dataset`."""
    name = dataset.device_id + ".txt"
    if layout == "single_dir":
        _write_matrix(os.path.join(root, name), dataset.train)
        return
    _write_matrix(os.path.join(root, "train", name), dataset.train)
    if dataset.test is not None:
        _write_matrix(os.path.join(root, "test", name), dataset.test)
        if dataset.test_labels is not None:
            text = "\n".join(str(int(i)) for i in dataset.test_labels)
            atomic_write_text(
                os.path.join(root, "test_label", name), text + "\n"
            )


def dataset_fingerprint(root):
    return sha256_path(root)


def check_schema(datasets):
    """All datasets must share metric count and names."""
    if not datasets:
        raise HeterogeneousSchema("no datasets")
    names = datasets[0].metric_names
    for d in datasets[1:]:
        if d.metric_names != names:
            raise HeterogeneousSchema(
                "{} has metrics {}, {} has {}".format(
                    d.device_id,
                    len(d.metric_names),
                    datasets[0].device_id,
                    len(names),
                )
            )
    return names


def variance_of_mean(datasets):
    """
    Population variance, across devices, of each metric's mean over the
    train split.

    :return: array of length ``M``
    """
    check_schema(datasets)
    datasets = sorted(datasets, key=lambda d: d.device_id)
    means = np.stack([d.train.mean(axis=1) for d in datasets])
    return np.var(means, axis=0)


KEPT = "kept"
ALL_ZERO_MAJORITY = "all_zero_majority"
COLLINEAR = "collinear_with"
LOW_VARIANCE = "low_variance"


class MetricRationale:
    def __init__(self, variance_of_mean, reason, collinear_with=None):
        self.variance_of_mean = float(variance_of_mean)
        self.reason = reason
        self.collinear_with = collinear_with

    def to_dict(self):
        ret = {
            "variance_of_mean": self.variance_of_mean,
            "reason": self.reason,
        }
        if self.collinear_with is not None:
            ret["collinear_with"] = int(self.collinear_with)
        return ret

    def __eq__(self, other):
        return self.to_dict() == other.to_dict()


class MetricSubset:
    """
    The representative metrics used for clustering, and why every other
    metric was left out.

    :param indices: kept metric indices, highest variance of mean first
    :param rationale: dictionary ``index -> MetricRationale`` for all ``M``
        metrics
    """

    def __init__(self, indices, rationale, metric_names=None):
        self.indices = tuple(int(i) for i in indices)
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("duplicated metric indices")
        self.rationale = dict(rationale)
        n = len(self.rationale)
        if any(i < 0 or i >= n for i in self.indices):
            raise ValueError("metric index out of range")
        if metric_names is None:
            metric_names = [str(i) for i in range(n)]
        self.metric_names = tuple(metric_names)

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        return (
            self.indices == other.indices
            and self.rationale == other.rationale
        )

    def dropped(self):
        return {
            i: r for i, r in self.rationale.items() if r.reason != KEPT
        }

    def to_dict(self):
        return {
            "kept": list(self.indices),
            "metric_names": list(self.metric_names),
            "metrics": {
                int(i): r.to_dict() for i, r in sorted(self.rationale.items())
            },
        }

    @staticmethod
    def from_dict(dic):
        rationale = {
            int(i): MetricRationale(
                r["variance_of_mean"], r["reason"], r.get("collinear_with")
            )
            for i, r in dic["metrics"].items()
        }
        return MetricSubset(dic["kept"], rationale, dic.get("metric_names"))

    def variance_csv(self):
        """Plot-ready ``metric,variance_of_mean,reason`` table."""
        lines = ["metric,variance_of_mean,reason"]
        for i, r in sorted(self.rationale.items()):
            reason = r.reason
            if r.collinear_with is not None:
                reason = "{}:{}".format(reason, r.collinear_with)
            lines.append(
                "{},{},{}".format(
                    self.metric_names[i], format_float(r.variance_of_mean),
                    reason,
                )
            )
        return "\n".join(lines) + "\n"


def _pearson(x, y):
    x = x - x.mean()
    y = y - y.mean()
    nx = np.sqrt(np.dot(x, x))
    ny = np.sqrt(np.dot(y, y))
    if nx == 0 or ny == 0:
        return 0.0
    return float(np.dot(x, y) / (nx * ny))


def select_metrics(
    datasets, top_n=6, zero_fraction_limit=0.5, collinearity_threshold=0.95
):
    """
    Choose the representative metrics.

    The ``top_n`` metrics with the largest variance of mean are candidates.
    A candidate that is all-zero on more than ``zero_fraction_limit`` of the
    devices is dropped. Among the rest, walking from the highest variance of
    mean down, a metric whose absolute Pearson correlation with an already
    kept metric reaches ``collinearity_threshold`` is dropped. Correlations
    use the pooled train splits after range scaling.

    :return: :class:`MetricSubset`
    """
    names = check_schema(datasets)
    n_metrics = len(names)
    if not 0 < top_n <= n_metrics:
        raise ValueError(
            "top_n must be in (0, {}], got {}".format(n_metrics, top_n)
        )
    for name, v in [
        ("zero_fraction_limit", zero_fraction_limit),
        ("collinearity_threshold", collinearity_threshold),
    ]:
        if not 0 < v <= 1:
            raise ValueError("{} must be in (0, 1], got {}".format(name, v))
    datasets = sorted(datasets, key=lambda d: d.device_id)
    vom = variance_of_mean(datasets)
    order = sorted(range(n_metrics), key=lambda m: (-vom[m], m))
    rationale = {
        m: MetricRationale(vom[m], LOW_VARIANCE) for m in order[top_n:]
    }
    pooled = np.concatenate([d.train for d in datasets], axis=1)
    spread = pooled.max(axis=1) - pooled.min(axis=1)
    pooled = pooled / np.where(spread == 0, 1.0, spread)[:, None]
    n_devices = len(datasets)
    kept = []
    for m in order[:top_n]:
        zeros = sum(1 for d in datasets if np.all(d.train[m] == 0))
        if zeros / n_devices > zero_fraction_limit:
            rationale[m] = MetricRationale(vom[m], ALL_ZERO_MAJORITY)
            continue
        for k in kept:
            if abs(_pearson(pooled[m], pooled[k])) >= collinearity_threshold:
                rationale[m] = MetricRationale(vom[m], COLLINEAR, k)
                break
        else:
            kept.append(m)
            rationale[m] = MetricRationale(vom[m], KEPT)
    if not kept:
        raise EmptySelection("every candidate metric was dropped")
    logger.info(
        "selected metrics %s",
        ", ".join(names[i] for i in kept),
    )
    return MetricSubset(kept, rationale, names)


class ScaledData:
    """
    Range-scaled representative metrics of every device.

    :param values: dictionary ``device_id -> array (H, T)``
    :param mins: global minimum of each kept metric (before scaling)
    :param ranges: global ``max - min`` of each kept metric
    :param degenerate: boolean flags of constant metrics
    """

    def __init__(self, values, indices, mins, ranges, full_minmax=False):
        self.values = dict(values)
        self.indices = tuple(indices)
        self.mins = np.asarray(mins, dtype=np.float64)
        self.ranges = np.asarray(ranges, dtype=np.float64)
        self.degenerate = self.ranges == 0
        self.full_minmax = full_minmax

    @property
    def device_ids(self):
        return sorted(self.values)

    def transform(self, dataset, split="train"):
        """Scale another device with the frozen statistics."""
        x = dataset.split(split)[list(self.indices)]
        if self.full_minmax:
            x = x - self.mins[:, None]
        safe = np.where(self.degenerate, 1.0, self.ranges)
        x = x / safe[:, None]
        x[self.degenerate] = 0.0
        return x


def scale_by_range(datasets, subset, full_minmax=False):
    """
    Divide each kept metric of every device by its global range
    ``max - min`` over all devices' train splits. With ``full_minmax`` the
    global minimum is subtracted first. Constant metrics become zeros and
    are flagged in :attr:`ScaledData.degenerate`.
    """
    if len(subset) == 0:
        raise EmptySelection("empty metric subset")
    check_schema(datasets)
    idx = list(subset.indices)
    stacked = [d.train[idx] for d in datasets]
    mins = np.min([s.min(axis=1) for s in stacked], axis=0)
    maxs = np.max([s.max(axis=1) for s in stacked], axis=0)
    ranges = maxs - mins
    for h in np.nonzero(ranges == 0)[0]:
        warnings.warn(
            "metric {} is constant across devices".format(idx[h]),
            DegenerateMetricWarning,
        )
    ret = ScaledData({}, idx, mins, ranges, full_minmax)
    for d in datasets:
        ret.values[d.device_id] = ret.transform(d)
    return ret


class WindowSet:
    """
    Sliding windows over one split of a device.

    ``windows[i]`` covers timesteps ``[i * stride, i * stride + w)``.
    """

    def __init__(self, windows, stride, w, device_id=None):
        self.windows = windows
        self.stride = stride
        self.w = w
        self.device_id = device_id

    def __len__(self):
        return self.windows.shape[0]

    def starts(self):
        return np.arange(len(self)) * self.stride

    def last_steps(self):
        """Timestep index of the last element of each window."""
        return self.starts() + self.w - 1

    def flatten(self):
        """Array ``(count, M * w)``, metric-major inside each window."""
        return np.ascontiguousarray(self.windows).reshape((len(self), -1))


def window_matrix(matrix, w, stride=1, device_id=None):
    n_steps = matrix.shape[1]
    if w < 1 or stride < 1:
        raise ValueError("window size and stride must be positive")
    if w > n_steps:
        raise WindowTooLong(
            "{}: window {} longer than {} timesteps".format(
                device_id, w, n_steps
            )
        )
    view = np.lib.stride_tricks.sliding_window_view(matrix, w, axis=1)
    # view: (M, T - w + 1, w) -> (count, M, w)
    windows = np.transpose(view[:, ::stride, :], (1, 0, 2))
    return WindowSet(windows, stride, w, device_id)


def make_windows(dataset, split, w, stride=1):
    """
    Sliding windows of length ``w`` over ``dataset``'s ``split``.

    There are ``floor((T - w) / stride) + 1`` windows.
    """
    return window_matrix(dataset.split(split), w, stride, dataset.device_id)


def split_train_val(flat_windows, val_fraction=0.1):
    """
    Chronological split: the last ``val_fraction`` of the windows
    validate, the rest train. At least one window always trains.
    """
    n = flat_windows.shape[0]
    n_val = int(np.ceil(n * val_fraction)) if val_fraction > 0 else 0
    n_val = min(n_val, n - 1)
    return flat_windows[: n - n_val], flat_windows[n - n_val :]


class NormalizationStats:
    """Per-feature min and range learned from a model's training data."""

    def __init__(self, features, mins, ranges):
        self.features = tuple(int(i) for i in features)
        self.mins = np.asarray(mins, dtype=np.float64)
        self.ranges = np.asarray(ranges, dtype=np.float64)

    def apply(self, matrix):
        x = matrix[list(self.features)]
        return (x - self.mins[:, None]) / self.ranges[:, None]

    def to_dict(self):
        return {
            "features": list(self.features),
            "mins": [float(i) for i in self.mins],
            "ranges": [float(i) for i in self.ranges],
        }

    @staticmethod
    def from_dict(dic):
        return NormalizationStats(dic["features"], dic["mins"], dic["ranges"])

    def __eq__(self, other):
        return self.to_dict() == other.to_dict()


def normalization_stats(datasets, features):
    """Min-max statistics of ``features`` over the pooled train splits.
    Constant features get range 1."""
    features = list(features)
    stacked = [d.train[features] for d in datasets]
    mins = np.min([s.min(axis=1) for s in stacked], axis=0)
    maxs = np.max([s.max(axis=1) for s in stacked], axis=0)
    ranges = maxs - mins
    ranges = np.where(ranges == 0, 1.0, ranges)
    return NormalizationStats(features, mins, ranges)
