import contextlib
import itertools
import os
import tempfile

import numpy as np

from tf_edgead.data import DeviceDataset
from tf_edgead.generator import SyntheticFleetSpec, generate_fleet
from tf_edgead.model import AutoencoderConfig
from tf_edgead.similarity import SimilarityGraph
from tf_edgead.strategies import StrategyConfig


@contextlib.contextmanager
def write_temp_file(s, filename=None):
    if filename is None:
        fd, a = tempfile.mkstemp(suffix=".yml")
        os.close(fd)
    else:
        a = filename
    with open(a, "w") as f:
        f.write(s)
    yield a
    os.remove(a)


def small_fleet(
    n_devices=6,
    n_clusters=2,
    seed=0,
    n_metrics=3,
    t_train=200,
    t_test=120,
    **kwargs
):
    """A quick synthetic fleet with well separated clusters."""
    args = {
        "n_devices": n_devices,
        "n_clusters_true": n_clusters,
        "n_metrics": n_metrics,
        "t_train": t_train,
        "t_test": t_test,
        "seed": seed,
        "cluster_separation": 3.0,
        "duration": 10,
    }
    args.update(kwargs)
    return generate_fleet(SyntheticFleetSpec(**args))


def tiny_autoencoder(n_features=3, **kwargs):
    args = {
        "window_size": 5,
        "num_layers": 2,
        "hidden_size": 4,
        "batch_size": 32,
        "learning_rate": 1e-2,
        "max_epochs": 3,
        "transfer_max_epochs": 1,
        "early_stopping": False,
        "val_fraction": 0.1,
    }
    args.update(kwargs)
    return AutoencoderConfig(n_features, **args)


def tiny_strategy_config(n_features=3, seed=0, **kwargs):
    return StrategyConfig(tiny_autoencoder(n_features, **kwargs), seed=seed)


def random_graph(rng, n, prefix="d"):
    """Complete graph on ``n`` devices with distinct random weights."""
    ids = ["{}{:02d}".format(prefix, i) for i in range(n)]
    pairs = list(itertools.combinations(ids, 2))
    weights = rng.permutation(len(pairs)) + rng.uniform(0, 0.5, len(pairs))
    return SimilarityGraph(ids, dict(zip(pairs, weights)))


def graph_from_letters(weights):
    """``{"AB": 1.0, ...}`` to a SimilarityGraph."""
    vertices = set("".join(weights))
    return SimilarityGraph(
        vertices, {(k[0], k[1]): v for k, v in weights.items()}
    )


def constant_device(device_id, values, t=50, test=None, labels=None):
    train = np.tile(np.asarray(values, dtype=np.float64)[:, None], (1, t))
    return DeviceDataset(device_id, train, test, labels)
