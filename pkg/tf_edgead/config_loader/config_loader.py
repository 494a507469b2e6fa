"""
YAML run configuration and the pipeline facade built on it.

A configuration file has the sections ``data``, ``similarity``,
``clustering``, ``model``, ``strategy`` and ``eval`` plus the top level
``seed`` and ``run_id``. Missing keys take the values of
:data:`DEFAULTS`; unknown keys are rejected.

.. code-block:: yaml

    data:
      root: fleet
      window_size: 10
    clustering:
      k: 3
    model:
      max_epochs: 30
    strategy:
      names: [gm, mpd, cm, icptl]

"""
import copy
import logging
import os

import yaml

from ..clustering import TrainingPlan, cluster_devices
from ..config import get_config
from ..data import (
    INGEST_LAYOUT,
    check_schema,
    ingest_dataset,
    select_metrics,
    set_random_seed,
)
from ..errors import UsageError
from ..evaluation import F1_MODES
from ..model.autoencoder import ACTIVATIONS, LAYER_RULES, AutoencoderConfig
from ..similarity import SimilarityProfile
from ..strategies import POOLED_MODES, STRATEGY, StrategyConfig
from .base_config import BaseConfig

logger = logging.getLogger(__name__)


class ConfigInvalid(UsageError, ValueError):
    pass


DEFAULTS = {
    "data": {
        "root": None,
        "layout": "smd_like",
        "fill_missing": False,
        "top_n": 6,
        "zero_fraction_limit": 0.5,
        "collinearity_threshold": 0.95,
        "full_minmax": False,
        "window_size": 10,
        "stride": 1,
        "model_features": "all",
    },
    "similarity": {"bins": 100},
    "clustering": {"k": 2, "sweep_k": None},
    "model": {
        "num_layers": 2,
        "hidden_size": 8,
        "layer_rule": "geometric",
        "activation": "tanh",
        "batch_size": 64,
        "learning_rate": 1e-3,
        "max_epochs": 30,
        "transfer_max_epochs": 20,
        "early_stopping": True,
        "early_stop_patience": 5,
        "early_stop_min_delta": 1e-3,
        "val_fraction": 0.1,
    },
    "strategy": {
        "names": ["gm", "mpd", "cm", "icptl"],
        "pooled_epoch_windows": "device_mean",
        "jaccard_threshold": 0.25,
    },
    "eval": {"f1_mode": "pointwise"},
    "seed": 0,
    "run_id": "default",
}


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _positive_int(v):
    return _is_int(v) and v > 0


def _unit(v):
    return _is_real(v) and 0 < v <= 1


def _choice(options):
    def check(v):
        return v in options

    check.options = options
    return check


def _layout(v):
    return v in get_config(INGEST_LAYOUT)


def _strategy_names(v):
    if not isinstance(v, list) or not v:
        return False
    known = get_config(STRATEGY)
    return all(i in known for i in v) and len(set(v)) == len(v)


def _run_id(v):
    return (
        isinstance(v, str)
        and v.strip() != ""
        and "/" not in v
        and "\\" not in v
        and v not in (".", "..")
    )


SCHEMA = {
    "data": {
        "root": lambda v: v is None or isinstance(v, str),
        "layout": _layout,
        "fill_missing": lambda v: isinstance(v, bool),
        "top_n": _positive_int,
        "zero_fraction_limit": _unit,
        "collinearity_threshold": _unit,
        "full_minmax": lambda v: isinstance(v, bool),
        "window_size": _positive_int,
        "stride": _positive_int,
        "model_features": _choice(("all", "selected")),
    },
    "similarity": {"bins": _positive_int},
    "clustering": {
        "k": _positive_int,
        "sweep_k": lambda v: v is None or isinstance(v, (list, str, int)),
    },
    "model": {
        "num_layers": _positive_int,
        "hidden_size": _positive_int,
        "layer_rule": _choice(LAYER_RULES),
        "activation": _choice(tuple(ACTIVATIONS)),
        "batch_size": _positive_int,
        "learning_rate": lambda v: _is_real(v) and v > 0,
        "max_epochs": lambda v: _is_int(v) and v >= 0,
        "transfer_max_epochs": lambda v: _is_int(v) and v >= 0,
        "early_stopping": lambda v: isinstance(v, bool),
        "early_stop_patience": _positive_int,
        "early_stop_min_delta": lambda v: _is_real(v) and v >= 0,
        "val_fraction": lambda v: _is_real(v) and 0 <= v < 1,
    },
    "strategy": {
        "names": _strategy_names,
        "pooled_epoch_windows": _choice(POOLED_MODES),
        "jaccard_threshold": lambda v: _is_real(v) and 0 <= v <= 1,
    },
    "eval": {"f1_mode": _choice(F1_MODES)},
    "seed": lambda v: _is_int(v) and v >= 0,
    "run_id": _run_id,
}


def merge_defaults(dic, defaults=DEFAULTS, prefix=""):
    """Deep merge ``dic`` over ``defaults``, rejecting unknown keys."""
    if dic is None:
        dic = {}
    if not isinstance(dic, dict):
        raise ConfigInvalid(
            "{} must be a mapping, got {!r}".format(prefix or "config", dic)
        )
    unknown = sorted(set(dic) - set(defaults))
    if unknown:
        raise ConfigInvalid(
            "unknown configuration keys: {}".format(
                ", ".join(prefix + str(i) for i in unknown)
            )
        )
    ret = {}
    for k, v in defaults.items():
        if isinstance(v, dict):
            ret[k] = merge_defaults(dic.get(k), v, prefix + k + ".")
        else:
            ret[k] = copy.deepcopy(dic.get(k, v))
    return ret


def validate(dic, schema=SCHEMA, prefix=""):
    for k, check in schema.items():
        if isinstance(check, dict):
            validate(dic[k], check, prefix + k + ".")
            continue
        if not check(dic[k]):
            options = getattr(check, "options", None)
            hint = "" if options is None else ", one of {}".format(options)
            raise ConfigInvalid(
                "invalid value {!r} for {}{}{}".format(
                    dic[k], prefix, k, hint
                )
            )
    model = dic.get("model")
    if model and model["transfer_max_epochs"] > model["max_epochs"]:
        raise ConfigInvalid(
            "model.transfer_max_epochs must not exceed model.max_epochs"
        )


def parse_k_range(value):
    """
    ``"a-b"`` (inclusive), ``"a,b,c"``, a single integer or a list of
    integers to a sorted list of distinct ``K``.
    """
    if isinstance(value, bool):
        raise ConfigInvalid("invalid K range {!r}".format(value))
    if _is_int(value):
        ks = [value]
    elif isinstance(value, list):
        ks = value
    elif isinstance(value, str):
        text = value.strip()
        try:
            if "-" in text:
                lo, hi = text.split("-")
                ks = list(range(int(lo), int(hi) + 1))
            elif text:
                ks = [int(i) for i in text.split(",")]
            else:
                ks = []
        except ValueError:
            raise ConfigInvalid("invalid K range {!r}".format(value))
    else:
        raise ConfigInvalid("invalid K range {!r}".format(value))
    if not all(_positive_int(k) for k in ks):
        raise ConfigInvalid("K values must be positive integers")
    ks = sorted(set(ks))
    if not ks:
        raise ConfigInvalid("empty K range {!r}".format(value))
    return ks


class ConfigLoader(BaseConfig):
    """
    class for loading config.yml

    :param file_name: YAML file name or an already parsed dictionary
    :param overrides: top level values replacing the file's, ``None``
        values are ignored
    """

    def __init__(self, file_name, overrides=None):
        try:
            super().__init__(file_name)
        except FileNotFoundError:
            raise ConfigInvalid("config file {} not found".format(file_name))
        except yaml.YAMLError as e:
            raise ConfigInvalid("config file is not YAML: {}".format(e))
        self.config = merge_defaults(self.config)
        for k, v in (overrides or {}).items():
            if v is not None:
                if k not in DEFAULTS:
                    raise ConfigInvalid("unknown override {}".format(k))
                self.config[k] = v
        validate(self.config)

    def snapshot(self):
        """Plain dictionary of the effective configuration."""
        return copy.deepcopy(self.config)

    def dump(self, path):
        with open(path, "w") as f:
            yaml.safe_dump(self.config, f, sort_keys=True)

    @property
    def seed(self):
        return self.config["seed"]

    @property
    def run_id(self):
        return self.config["run_id"]

    def set_random_seed(self):
        set_random_seed(self.seed)

    def data_root(self):
        root = self.config["data"]["root"]
        if root is None:
            raise ConfigInvalid("data.root is not set")
        root = os.path.expanduser(root)
        if not os.path.isabs(root):
            root = os.path.join(self.config_dir, root)
        return root

    def get_datasets(self):
        data = self.config["data"]
        datasets = ingest_dataset(
            self.data_root(), data["layout"], data["fill_missing"]
        )
        check_schema(datasets)
        return datasets

    def get_metric_subset(self, datasets):
        data = self.config["data"]
        n_metrics = len(check_schema(datasets))
        top_n = min(data["top_n"], n_metrics)
        return select_metrics(
            datasets,
            top_n=top_n,
            zero_fraction_limit=data["zero_fraction_limit"],
            collinearity_threshold=data["collinearity_threshold"],
        )

    def get_similarity_profile(self, datasets, subset):
        return SimilarityProfile.fit(
            datasets,
            subset,
            bins=self.config["similarity"]["bins"],
            full_minmax=self.config["data"]["full_minmax"],
        )

    def get_cluster_map(self, graph, k=None):
        if k is None:
            k = self.config["clustering"]["k"]
        return cluster_devices(graph, k)

    def get_training_plan(self, graph, cluster_map):
        return TrainingPlan.build(graph, cluster_map)

    def model_features(self, datasets, subset=None):
        """Metric indices fed to the autoencoder, ``None`` for all."""
        if self.config["data"]["model_features"] == "all":
            return None
        if subset is None:
            raise ConfigInvalid(
                "data.model_features: selected needs the metric subset"
            )
        return list(subset.indices)

    def get_autoencoder_config(self, n_features):
        model = self.config["model"]
        try:
            return AutoencoderConfig(
                n_features,
                window_size=self.config["data"]["window_size"],
                seed=self.seed,
                **model,
            )
        except ValueError as e:
            raise ConfigInvalid("model: {}".format(e))

    def get_strategy_config(self, datasets, subset=None):
        features = self.model_features(datasets, subset)
        if features is None:
            n_features = len(check_schema(datasets))
        else:
            n_features = len(features)
        strategy = self.config["strategy"]
        return StrategyConfig(
            self.get_autoencoder_config(n_features),
            features=features,
            seed=self.seed,
            pooled_epoch_windows=strategy["pooled_epoch_windows"],
            jaccard_threshold=strategy["jaccard_threshold"],
            stride=self.config["data"]["stride"],
        )

    def strategy_names(self, names=None):
        """Configured strategies, or the comma separated ``names``."""
        if names is None:
            return list(self.config["strategy"]["names"])
        if isinstance(names, str):
            names = [i.strip() for i in names.split(",") if i.strip()]
        if not _strategy_names(list(names)):
            raise ConfigInvalid(
                "unknown strategies {}, available {}".format(
                    names, sorted(get_config(STRATEGY))
                )
            )
        return list(names)

    def get_sweep_k(self, n_devices, value=None):
        if value is None:
            value = self.config["clustering"]["sweep_k"]
        if value is None:
            value = "1-{}".format(n_devices)
        ks = parse_k_range(value)
        if ks[-1] > n_devices:
            raise ConfigInvalid(
                "K range {} exceeds the {} devices".format(ks, n_devices)
            )
        return ks

    @property
    def f1_mode(self):
        return self.config["eval"]["f1_mode"]
