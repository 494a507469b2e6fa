"""
Synthetic edge fleets with planted clusters and labeled anomalies.

Every cluster has its own operating point (mean per metric), seasonal
period, phase and amplitudes; the cluster means lie on a line, one
``cluster_separation`` apart per metric. Devices are drawn around their
cluster with a small jitter. The test split continues the train split and
receives non-overlapping anomalies:

- ``level_shift``: the device moves to the operating point of another
  cluster for ``duration`` steps (``magnitude`` scales the move),
- ``spike``: one metric jumps at a single timestep,
- ``variance_burst``: the noise grows for ``duration`` steps.
"""
import abc
import logging
import os

import numpy as np

from ..data import DeviceDataset, save_dataset
from ..errors import EdgeADError
from ..utils import load_config_file, save_yaml_file

logger = logging.getLogger(__name__)

ANOMALY_TYPES = ("level_shift", "spike", "variance_burst")


class BadSpec(EdgeADError, ValueError):
    pass


class BaseGenerator(metaclass=abc.ABCMeta):
    """Draws a ``DataType``, written under ``root`` when given."""

    DataType = object

    @abc.abstractmethod
    def generate(self, root=None):
        raise NotImplementedError("generate")


class SyntheticFleetSpec:
    """
    Description of a synthetic fleet.

    :param cluster_means: optional ``(n_clusters_true, n_metrics)`` means
    :param cluster_scales: optional ``(n_clusters_true, n_metrics)``
        seasonal amplitudes
    :param anomaly_rate: expected fraction of anomalous test timesteps
    """

    defaults = {
        "n_devices": 9,
        "n_clusters_true": 3,
        "n_metrics": 4,
        "t_train": 1200,
        "t_test": 600,
        "seed": 0,
        "cluster_separation": 1.0,
        "amplitude": 0.3,
        "period": 50.0,
        "noise": 0.05,
        "device_jitter": 0.05,
        "cluster_means": None,
        "cluster_scales": None,
        "anomaly_types": list(ANOMALY_TYPES),
        "anomaly_rate": 0.05,
        "magnitude": 1.0,
        "duration": 20,
        "id_format": "device-{:02d}",
    }

    def __init__(self, **kwargs):
        unknown = set(kwargs) - set(self.defaults)
        if unknown:
            raise BadSpec("unknown spec keys {}".format(sorted(unknown)))
        for k, v in self.defaults.items():
            setattr(self, k, kwargs.get(k, v))
        self.check()

    def check(self):
        for k in ["n_devices", "n_clusters_true", "n_metrics", "duration"]:
            if int(getattr(self, k)) < 1:
                raise BadSpec("{} must be positive".format(k))
        if self.n_clusters_true > self.n_devices:
            raise BadSpec("more clusters than devices")
        if not 0 < self.anomaly_rate < 0.5:
            raise BadSpec("anomaly_rate must be in (0, 0.5)")
        if self.t_train < 2 or self.t_test < 2 * self.duration:
            raise BadSpec("splits are too short for the anomaly duration")
        if self.noise < 0 or self.device_jitter < 0 or self.period <= 0:
            raise BadSpec("noise, jitter and period must be non negative")
        bad = set(self.anomaly_types) - set(ANOMALY_TYPES)
        if bad or not self.anomaly_types:
            raise BadSpec(
                "anomaly types must be from {}".format(ANOMALY_TYPES)
            )
        shape = (self.n_clusters_true, self.n_metrics)
        for k in ["cluster_means", "cluster_scales"]:
            v = getattr(self, k)
            if v is not None and np.shape(v) != shape:
                raise BadSpec("{} must have shape {}".format(k, shape))
        try:
            self.id_format.format(0)
        except (IndexError, KeyError, ValueError) as e:
            raise BadSpec("bad id_format: {}".format(e))

    def to_dict(self):
        ret = {k: getattr(self, k) for k in self.defaults}
        for k in ["cluster_means", "cluster_scales"]:
            if ret[k] is not None:
                ret[k] = np.asarray(ret[k], dtype=np.float64).tolist()
        ret["anomaly_types"] = list(ret["anomaly_types"])
        return ret

    @staticmethod
    def from_dict(dic):
        return SyntheticFleetSpec(**(dic or {}))

    @staticmethod
    def load(path):
        try:
            dic = load_config_file(path)
        except FileNotFoundError:
            raise BadSpec("spec file {} not found".format(path))
        if dic is not None and not isinstance(dic, dict):
            raise BadSpec("spec must be a mapping")
        return SyntheticFleetSpec.from_dict(dic)


class SyntheticFleet:
    """Generated datasets with their planted cluster index."""

    def __init__(self, datasets, clusters, spec):
        self.datasets = datasets
        self.clusters = dict(clusters)
        self.spec = spec

    def truth_partition(self):
        ret = {}
        for d, c in self.clusters.items():
            ret.setdefault(c, set()).add(d)
        return [ret[c] for c in sorted(ret)]

    def save(self, root):
        for d in self.datasets:
            save_dataset(d, root)
        save_yaml_file(
            os.path.join(root, "truth.yml"),
            {"clusters": dict(self.clusters), "spec": self.spec.to_dict()},
        )


class FleetGenerator(BaseGenerator):
    DataType = SyntheticFleet

    def __init__(self, spec):
        self.spec = spec

    def _cluster_params(self, rng):
        s = self.spec
        k, h = s.n_clusters_true, s.n_metrics
        direction = rng.choice([-1.0, 1.0], size=h)
        if s.cluster_means is None:
            means = s.cluster_separation * (
                k + np.arange(k)[:, None] * direction[None, :]
            )
        else:
            means = np.asarray(s.cluster_means, dtype=np.float64)
        if s.cluster_scales is None:
            scales = (
                s.amplitude
                * rng.uniform(0.5, 1.5, size=(k, h))
                * rng.choice([-1.0, 1.0], size=(k, h))
            )
        else:
            scales = np.asarray(s.cluster_scales, dtype=np.float64)
        periods = s.period * (1.0 + 0.37 * np.arange(k))
        phases = rng.uniform(0, 2 * np.pi, size=k)
        return means, scales, periods, phases, direction

    def _anomalies(self, rng, x, c, means, direction):
        """Inject anomalies into the test matrix ``x`` in place."""
        s = self.spec
        t_test = x.shape[1]
        labels = np.zeros(t_test, dtype=np.int64)
        n_events = max(1, int(round(s.anomaly_rate * t_test / s.duration)))
        margin = s.duration
        slot = (t_test - margin) // n_events
        if slot < s.duration:
            n_events = max(1, (t_test - margin) // s.duration)
            slot = (t_test - margin) // n_events
        for i in range(n_events):
            kind = s.anomaly_types[rng.integers(len(s.anomaly_types))]
            offset = int(rng.integers(slot - s.duration + 1))
            start = margin + i * slot + offset
            end = start + s.duration
            if kind == "level_shift":
                others = [j for j in range(len(means)) if j != c]
                if others:
                    target = others[rng.integers(len(others))]
                    shift = means[target] - means[c]
                else:
                    shift = s.cluster_separation * direction
                x[:, start:end] += s.magnitude * shift[:, None]
                labels[start:end] = 1
            elif kind == "spike":
                m = rng.integers(x.shape[0])
                sign = rng.choice([-1.0, 1.0])
                x[m, start] += sign * s.magnitude * (
                    s.cluster_separation + s.amplitude + 10 * s.noise
                )
                labels[start] = 1
            else:
                burst = rng.normal(size=(x.shape[0], s.duration))
                x[:, start:end] += (
                    burst * s.magnitude * max(10 * s.noise, s.amplitude)
                )
                labels[start:end] = 1
        return labels

    def generate(self, root=None):
        s = self.spec
        rng = np.random.default_rng(s.seed)
        means, scales, periods, phases, direction = self._cluster_params(rng)
        t = np.arange(s.t_train + s.t_test)
        datasets, clusters = [], {}
        for i in range(s.n_devices):
            c = i % s.n_clusters_true
            device_id = s.id_format.format(i)
            mu = means[c] + s.device_jitter * rng.normal(size=s.n_metrics)
            amp = scales[c] * (
                1 + s.device_jitter * rng.normal(size=s.n_metrics)
            )
            phase = phases[c] + s.device_jitter * rng.normal()
            season = np.sin(2 * np.pi * t / periods[c] + phase)
            x = mu[:, None] + amp[:, None] * season[None, :]
            x = x + s.noise * rng.normal(size=x.shape)
            train, test = x[:, : s.t_train], x[:, s.t_train :].copy()
            labels = self._anomalies(rng, test, c, means, direction)
            datasets.append(
                DeviceDataset(
                    device_id,
                    train,
                    test,
                    labels,
                    provenance={"generator_seed": s.seed, "cluster": c},
                )
            )
            clusters[device_id] = c
        fleet = SyntheticFleet(datasets, clusters, s)
        if root is not None:
            fleet.save(root)
            logger.info("wrote %d devices to %s", len(datasets), root)
        return fleet


def generate_fleet(spec, root=None):
    """
    Draw the fleet described by ``spec``; written in the SMD like layout
    when ``root`` is given.
    """
    return FleetGenerator(spec).generate(root)
