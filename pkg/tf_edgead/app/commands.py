"""
Subcommands of ``python -m tf_edgead``.

Every pipeline subcommand takes ``--config`` (YAML file), ``--out``
(parent of the run directories), ``--run-id``, ``--seed`` and ``--force``.
"""
import os

import yaml

from ..config_loader import ConfigLoader
from ..generator import SyntheticFleetSpec, generate_fleet
from ..main import regist_subcommand
from .pipeline import Pipeline


def _pipeline(config, out, run_id, seed, force):
    loader = ConfigLoader(config, overrides={"seed": seed})
    return Pipeline(loader, out=out, run_id=run_id, force=force)


def _done(stage, ran, pipeline):
    state = "done" if ran else "up to date"
    print("{}: {} ({})".format(stage, state, pipeline.run_dir), flush=True)


@regist_subcommand(name="inspect")
def inspect_data(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
):
    """read the dataset and describe it"""
    p = _pipeline(config, out, run_id, seed, force)
    _done("inspect", p.inspect(), p)


@regist_subcommand()
def select_metrics(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
):
    """choose the representative metrics"""
    p = _pipeline(config, out, run_id, seed, force)
    _done("select-metrics", p.select_metrics(), p)


@regist_subcommand()
def similarity(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
):
    """build the device similarity graph"""
    p = _pipeline(config, out, run_id, seed, force)
    _done("similarity", p.similarity(), p)


@regist_subcommand()
def cluster(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
    k: int = None,
):
    """cluster the devices into K groups"""
    p = _pipeline(config, out, run_id, seed, force)
    _done("cluster", p.cluster(k), p)


@regist_subcommand()
def plan(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
):
    """transfer order inside every cluster"""
    p = _pipeline(config, out, run_id, seed, force)
    _done("plan", p.plan(), p)


@regist_subcommand()
def train(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
    strategy=None,
):
    """train the strategies (comma separated --strategy)"""
    p = _pipeline(config, out, run_id, seed, force)
    names = p.config.strategy_names(strategy)
    for name, ran in zip(names, p.train(names)):
        _done("train " + name, ran, p)


@regist_subcommand()
def evaluate(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
    strategy=None,
):
    """AUC and best F1 of the trained strategies"""
    p = _pipeline(config, out, run_id, seed, force)
    _done("evaluate", p.evaluate(strategy), p)


@regist_subcommand()
def report(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
):
    """print the strategy comparison"""
    p = _pipeline(config, out, run_id, seed, force)
    p.report()
    with open(p.path("report.txt")) as f:
        print(f.read(), end="", flush=True)


@regist_subcommand()
def sweep_k(
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
    k=None,
    strategy=None,
):
    """evaluate cm and icptl over a range of K (--k 2-5 or --k 2,4)"""
    p = _pipeline(config, out, run_id, seed, force)
    _done("sweep-k", p.sweep_k(k, strategy), p)
    with open(p.path("sweep_k.csv")) as f:
        print(f.read(), end="", flush=True)


@regist_subcommand()
def genfleet(*, spec=None, out="fleet", seed: int = None):
    """write a synthetic fleet (--spec YAML file) into --out"""
    if spec is None:
        fleet_spec = SyntheticFleetSpec()
    else:
        fleet_spec = SyntheticFleetSpec.load(spec)
    if seed is not None:
        dic = fleet_spec.to_dict()
        dic["seed"] = seed
        fleet_spec = SyntheticFleetSpec.from_dict(dic)
    fleet = generate_fleet(fleet_spec, out)
    print(
        "genfleet: {} devices in {} clusters written to {}".format(
            len(fleet.datasets), fleet_spec.n_clusters_true, out
        ),
        flush=True,
    )


@regist_subcommand()
def fleet_event(
    event,
    device,
    *,
    config="config.yml",
    out="runs",
    run_id=None,
    seed: int = None,
    force=False,
    dry_run=False,
):
    """react to device_added, device_removed or device_drifted"""
    p = _pipeline(config, out, run_id, seed, force)
    actions = p.fleet_event(event, device, dry_run=dry_run)
    if actions:
        text = yaml.safe_dump([a.to_dict() for a in actions], sort_keys=True)
        print(text, end="")
    else:
        print("no actions")
    print(
        "fleet-event: {} ({})".format(
            "planned" if dry_run else "applied",
            os.path.join(p.run_dir, "fleet_actions.yml"),
        ),
        flush=True,
    )


@regist_subcommand(name="help")
def help_function():
    """usage summary"""
    print(
        """
    using ```python -m tf_edgead [subcommand] --config config.yml```

    pipeline: inspect, select-metrics, similarity, cluster, plan, train,
              evaluate, report
    others:   sweep-k, genfleet, fleet-event
    """
    )
