"""
Training strategies over a device fleet.

========  ==========================  =========  ====================
strategy  models                      count      epochs (no early stop)
========  ==========================  =========  ====================
gm        one on all devices          1          L
mpd       one per device              N          N L
cm        one per cluster             K          K L
icptl     one per device, transfer    N          K L + (N - K) l
          along the cluster MST
========  ==========================  =========  ====================

Every model trained from scratch goes through :func:`train_pooled`, and its
seed only depends on the global seed and the ids of the devices it learns
from, so a strategy that ends up training on the same devices as another
one produces the same parameters.
"""
import logging
import os

import numpy as np

from .config import get_config, registry
from .data import (
    normalization_stats,
    split_train_val,
    window_matrix,
)
from .errors import EdgeADError
from .model import (
    init_model,
    load_model,
    save_model,
    train,
    transfer_train,
)
from .utils import (
    atomic_write_text,
    derive_seed,
    load_config_file,
    save_yaml_file,
)

logger = logging.getLogger(__name__)

STRATEGY = "strategy"
_register_strategy = registry(STRATEGY, "strategy")

GLOBAL_KEY = "global"
POOLED_MODES = ("device_mean", "all")


class EmptyCluster(EdgeADError, ValueError):
    pass


class PlanMismatch(EdgeADError, ValueError):
    pass


def register_strategy(name=None, f=None):
    """register a training strategy

    :params name: strategy name used in configuration and on the command
        line
    :params f: function ``(datasets, config, cluster_map, plan) ->
        StrategyRun``
    """
    return _register_strategy(name, f)


def available_strategies():
    return sorted(get_config(STRATEGY))


class StrategyConfig:
    """
    Settings shared by all strategies.

    :param autoencoder: :class:`AutoencoderConfig` template, its seed is
        replaced per model
    :param features: metric indices fed to the autoencoder, all when None
    :param seed: global seed
    :param pooled_epoch_windows: ``device_mean`` draws as many windows per
        epoch as the mean device has when several devices are pooled;
        ``all`` uses every pooled window
    :param jaccard_threshold: membership change that triggers a cluster
        model retrain on fleet events
    :param stride: step between consecutive training windows
    """

    def __init__(
        self,
        autoencoder,
        features=None,
        seed=0,
        pooled_epoch_windows="device_mean",
        jaccard_threshold=0.25,
        stride=1,
    ):
        if pooled_epoch_windows not in POOLED_MODES:
            raise ValueError(
                "pooled_epoch_windows must be one of {}".format(POOLED_MODES)
            )
        self.autoencoder = autoencoder
        self.features = None if features is None else tuple(features)
        if self.features is not None and len(self.features) != (
            autoencoder.n_features
        ):
            raise ValueError("features do not match autoencoder n_features")
        self.seed = int(seed)
        self.pooled_epoch_windows = pooled_epoch_windows
        self.jaccard_threshold = float(jaccard_threshold)
        self.stride = int(stride)
        if self.stride < 1:
            raise ValueError("stride must be positive")

    def feature_indices(self, dataset):
        if self.features is None:
            return list(range(dataset.n_metrics))
        return list(self.features)

    def model_config(self, members):
        key = ",".join(sorted(members))
        return self.autoencoder.replace(seed=derive_seed(self.seed, key))


class StrategyRun:
    """
    Models of one strategy and the device to model routing.

    :param models: dictionary ``model key -> TrainedModel``
    :param routing: dictionary ``device_id -> model key``
    """

    def __init__(self, strategy, models, routing):
        self.strategy = strategy
        self.models = dict(models)
        self.routing = dict(routing)
        missing = set(self.routing.values()) - set(self.models)
        if missing:
            raise PlanMismatch(
                "routing to unknown models {}".format(sorted(missing))
            )

    def __repr__(self):
        return "StrategyRun({!r}, models={}, devices={})".format(
            self.strategy, len(self.models), len(self.routing)
        )

    def model_for(self, device_id):
        return self.models[self.routing[device_id]]

    @property
    def models_trained(self):
        return len(self.models)

    @property
    def total_epochs(self):
        return sum(
            m.provenance.get("epochs_run", 0) for m in self.models.values()
        )

    @property
    def total_wall_time(self):
        return sum(
            m.provenance.get("wall_time", 0.0) for m in self.models.values()
        )

    @property
    def cost(self):
        return {
            "models_trained": self.models_trained,
            "total_epochs": self.total_epochs,
            "total_wall_time": self.total_wall_time,
        }

    def cost_text(self):
        return "models_trained,total_epochs,wall_time_ms\n{},{},{}\n".format(
            self.models_trained,
            self.total_epochs,
            int(round(self.total_wall_time * 1000)),
        )

    def replace(self, models=None, routing=None, drop=()):
        new_models = dict(self.models)
        new_models.update(models or {})
        new_routing = dict(self.routing)
        new_routing.update(routing or {})
        for i in drop:
            new_routing.pop(i, None)
        used = set(new_routing.values())
        new_models = {k: v for k, v in new_models.items() if k in used}
        return StrategyRun(self.strategy, new_models, new_routing)

    def save(self, path):
        """
        Write ``models/<key>.model``, ``routing.csv``, ``cost.txt``,
        ``run.yml`` and the ``timing.yml`` wall times under ``path``.
        """
        model_dir = os.path.join(path, "models")
        if os.path.isdir(model_dir):
            for name in os.listdir(model_dir):
                if name.endswith(".model"):
                    os.remove(os.path.join(model_dir, name))
        for key, m in sorted(self.models.items()):
            save_model(m, os.path.join(model_dir, key + ".model"))
        routing = ["device,model"] + [
            "{},{}".format(d, k) for d, k in sorted(self.routing.items())
        ]
        atomic_write_text(
            os.path.join(path, "routing.csv"), "\n".join(routing) + "\n"
        )
        atomic_write_text(os.path.join(path, "cost.txt"), self.cost_text())
        save_yaml_file(
            os.path.join(path, "run.yml"),
            {"strategy": self.strategy, "models": sorted(self.models)},
        )
        save_yaml_file(
            os.path.join(path, "timing.yml"),
            {
                k: float(m.provenance.get("wall_time", 0.0))
                for k, m in self.models.items()
            },
        )

    @staticmethod
    def load(path):
        info = load_config_file(os.path.join(path, "run.yml"))
        timing_file = os.path.join(path, "timing.yml")
        timing = {}
        if os.path.exists(timing_file):
            timing = load_config_file(timing_file) or {}
        models = {}
        for key in info["models"]:
            m = load_model(os.path.join(path, "models", key + ".model"))
            provenance = dict(m.provenance)
            provenance["wall_time"] = float(timing.get(key, 0.0))
            models[key] = m.replace(provenance=provenance)
        routing = {}
        with open(os.path.join(path, "routing.csv")) as f:
            for line in f.read().splitlines()[1:]:
                if line.strip():
                    d, k = line.strip().split(",")
                    routing[d] = k
        return StrategyRun(info["strategy"], models, routing)


def device_windows(dataset, stats, config):
    """Normalized, flattened train and validation windows of one device."""
    ae = config.autoencoder
    matrix = stats.apply(dataset.train)
    flat = window_matrix(
        matrix, ae.window_size, config.stride, dataset.device_id
    ).flatten()
    return split_train_val(flat, ae.val_fraction)


def train_pooled(datasets, config, strategy, model_id):
    """
    One model from scratch on the concatenated windows of ``datasets``
    (ordered by device id), normalized with their pooled statistics.
    """
    datasets = sorted(datasets, key=lambda d: d.device_id)
    ids = [d.device_id for d in datasets]
    features = config.feature_indices(datasets[0])
    stats = normalization_stats(datasets, features)
    parts = [device_windows(d, stats, config) for d in datasets]
    x = np.concatenate([p[0] for p in parts])
    x_val = np.concatenate([p[1] for p in parts])
    epoch_size = None
    if config.pooled_epoch_windows == "device_mean":
        epoch_size = int(round(np.mean([p[0].shape[0] for p in parts])))
    model = init_model(config.model_config(ids)).replace(
        model_id=model_id,
        normalization=stats,
        provenance={"strategy": strategy, "devices": ids},
    )
    logger.info(
        "%s: training %s on %d devices, %d windows",
        strategy,
        model_id,
        len(ids),
        x.shape[0],
    )
    return train(model, x, x_val, epoch_size=epoch_size, strategy=strategy)


def transfer_to_device(source, dataset, config, strategy, model_id):
    """Fine tune ``source`` on one device, normalized with its own data."""
    features = config.feature_indices(dataset)
    stats = normalization_stats([dataset], features)
    x, x_val = device_windows(dataset, stats, config)
    logger.info(
        "%s: transfer %s -> %s", strategy, source.model_id, model_id
    )
    model = transfer_train(
        source,
        x,
        x_val,
        config=config.model_config([dataset.device_id]),
        strategy=strategy,
        model_id=model_id,
        normalization=stats,
    )
    provenance = dict(model.provenance)
    provenance["devices"] = [dataset.device_id]
    return model.replace(provenance=provenance)


def _by_id(datasets):
    if not datasets:
        raise EmptyCluster("no devices")
    ret = {d.device_id: d for d in datasets}
    if len(ret) != len(datasets):
        raise PlanMismatch("duplicated device ids")
    return ret


@register_strategy("gm")
def run_gm(datasets, config, cluster_map=None, plan=None):
    """One generic model on all devices."""
    by_id = _by_id(datasets)
    model = train_pooled(datasets, config, "gm", GLOBAL_KEY)
    routing = {i: GLOBAL_KEY for i in by_id}
    return StrategyRun("gm", {GLOBAL_KEY: model}, routing)


@register_strategy("mpd")
def run_mpd(datasets, config, cluster_map=None, plan=None):
    """One model per device on its own data."""
    by_id = _by_id(datasets)
    models = {
        i: train_pooled([d], config, "mpd", i)
        for i, d in sorted(by_id.items())
    }
    return StrategyRun("mpd", models, {i: i for i in by_id})


@register_strategy("cm")
def run_cm(datasets, config, cluster_map=None, plan=None):
    """One model per cluster on the pooled data of its members."""
    if cluster_map is None:
        raise PlanMismatch("cm needs a cluster map")
    by_id = _by_id(datasets)
    models, routing = {}, {}
    for c, members in sorted(cluster_map.clusters.items()):
        present = [by_id[i] for i in sorted(members) if i in by_id]
        if not present:
            raise EmptyCluster("cluster {} has no device data".format(c))
        models[c] = train_pooled(present, config, "cm", c)
        routing.update({d.device_id: c for d in present})
    if set(routing) != set(by_id) or set(cluster_map.devices) != set(by_id):
        raise PlanMismatch("cluster map does not cover the devices")
    return StrategyRun("cm", models, routing)


def run_cluster_plan(by_id, cluster_plan, config):
    """Root from scratch, then every plan step transfers source to target."""
    models = {
        cluster_plan.root: train_pooled(
            [by_id[cluster_plan.root]], config, "icptl", cluster_plan.root
        )
    }
    for source, target, _ in cluster_plan.steps:
        models[target] = transfer_to_device(
            models[source], by_id[target], config, "icptl", target
        )
    return models


@register_strategy("icptl")
def run_icptl(datasets, config, cluster_map=None, plan=None):
    """
    Per device models trained along each cluster's transfer plan.
    Clusters do not share any state.
    """
    if plan is None:
        raise PlanMismatch("icptl needs a training plan")
    by_id = _by_id(datasets)
    covered = set()
    for c, p in plan.items():
        if p.devices & covered or not p.devices <= set(by_id):
            raise PlanMismatch("plan of {} does not match devices".format(c))
        covered |= p.devices
    if covered != set(by_id):
        raise PlanMismatch(
            "devices without a plan: {}".format(sorted(set(by_id) - covered))
        )
    models = {}
    for _, p in plan.items():
        models.update(run_cluster_plan(by_id, p, config))
    return StrategyRun("icptl", models, {i: i for i in by_id})


def run_strategy(name, datasets, config, cluster_map=None, plan=None):
    strategies = get_config(STRATEGY)
    if name not in strategies:
        raise ValueError(
            "unknown strategy {}, one of {}".format(
                name, available_strategies()
            )
        )
    run = strategies[name](datasets, config, cluster_map, plan)
    logger.info(
        "%s: %d models, %d epochs, %.3fs",
        name,
        run.models_trained,
        run.total_epochs,
        run.total_wall_time,
    )
    return run


def theoretical_cost(strategy, n, k, max_epochs, transfer_epochs):
    """
    ``(models, epochs)`` without early stopping.
    """
    table = {
        "gm": (1, max_epochs),
        "mpd": (n, n * max_epochs),
        "cm": (k, k * max_epochs),
        "icptl": (n, k * max_epochs + (n - k) * transfer_epochs),
    }
    if strategy not in table:
        raise ValueError("unknown strategy {}".format(strategy))
    return table[strategy]


def needs_clusters(strategy):
    return strategy == "cm"


def needs_plan(strategy):
    return strategy == "icptl"
