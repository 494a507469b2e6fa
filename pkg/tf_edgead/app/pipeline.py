"""
Stages of a run directory ``<out>/<run_id>/``.

============== ====================== ======================================
stage          needs                  writes
============== ====================== ======================================
inspect                               ``inspect.yml``
select-metrics inspect                ``metrics.yml``, ``variance_of_mean.csv``
similarity     select-metrics         ``graph.csv``, ``profile.npz``
cluster        similarity             ``clusters.yml``
plan           cluster                ``plan.yml``
train          inspect, cluster (cm), ``models/<strategy>/``
               plan (icptl)
evaluate       train                  ``evaluation.csv``, ``scores/``
report         evaluate               ``report.txt``, ``loss_curves.csv``
sweep-k        similarity             ``sweep_k.csv``
fleet-event    similarity, plan,      ``fleet_actions.yml`` and updated
               train                  graph, clusters, plan and models
============== ====================== ======================================
"""
import logging
import os
import shutil

from ..clustering import ClusterMap, TrainingPlan, cluster_devices
from ..data import MetricSubset, dataset_fingerprint
from ..evaluation import (
    EvaluationReport,
    compare_strategies,
    loss_curves_text,
)
from ..fleet import (
    DEVICE_ADDED,
    DEVICE_DRIFTED,
    DEVICE_REMOVED,
    EVENTS,
    FleetState,
    apply_actions,
    handle_fleet_event,
)
from ..run_manifest import RunManifest, StageDependencyMissing, inputs_hash
from ..similarity import SimilarityGraph, SimilarityProfile
from ..strategies import (
    StrategyRun,
    needs_clusters,
    needs_plan,
    run_strategy,
    theoretical_cost,
)
from ..utils import (
    Timer,
    atomic_write_text,
    create_dir,
    format_float,
    load_config_file,
    save_yaml_file,
)

logger = logging.getLogger(__name__)

STAGES = (
    "inspect",
    "select-metrics",
    "similarity",
    "cluster",
    "plan",
    "train",
    "evaluate",
    "report",
)

MODEL_VOLATILE_FILES = ("cost.txt", "timing.yml")

SWEEP_HEADER = "k,strategy,mean_auc,mean_f1,models,epochs,wall_ms"


def train_stage(strategy):
    return "train:" + strategy


def inspection_report(datasets, fingerprint, layout):
    devices = {}
    for d in datasets:
        info = {
            "train_length": int(d.train.shape[1]),
            "test_length": 0 if d.test is None else int(d.test.shape[1]),
            "labeled": d.test_labels is not None,
            "filled_cells": int(d.provenance.get("filled_cells", 0)),
        }
        if d.test_labels is not None:
            info["anomaly_fraction"] = float(d.test_labels.mean())
        devices[d.device_id] = info
    return {
        "dataset_fingerprint": fingerprint,
        "layout": layout,
        "n_devices": len(datasets),
        "n_metrics": int(datasets[0].n_metrics),
        "metric_names": list(datasets[0].metric_names),
        "devices": devices,
    }


def parse_event(event):
    """``device_added`` or the short ``added``/``add`` forms."""
    aliases = {
        "add": DEVICE_ADDED,
        "added": DEVICE_ADDED,
        "remove": DEVICE_REMOVED,
        "removed": DEVICE_REMOVED,
        "drift": DEVICE_DRIFTED,
        "drifted": DEVICE_DRIFTED,
    }
    event = aliases.get(event, event)
    if event not in EVENTS:
        raise ValueError(
            "unknown fleet event {}, one of {}".format(event, EVENTS)
        )
    return event


class Pipeline:
    """
    Runs the stages of one run directory and keeps its manifest.

    :param config: :class:`~tf_edgead.config_loader.ConfigLoader`
    :param out: parent of the run directories
    :param run_id: run directory name, the configured ``run_id`` if None
    :param force: rerun stages whose inputs did not change
    """

    def __init__(self, config, out="runs", run_id=None, force=False):
        self.config = config
        self.run_id = config.run_id if run_id is None else run_id
        self.run_dir = os.path.join(out, self.run_id)
        self.force = force
        self.manifest = RunManifest.load(self.run_dir, self.run_id)
        self._datasets = None
        config.set_random_seed()

    def path(self, *names):
        return os.path.join(self.run_dir, *names)

    @property
    def datasets(self):
        if self._datasets is None:
            self._datasets = self.config.get_datasets()
        return self._datasets

    def check_dataset(self, needed_by):
        """The dataset on disk is still the one inspected."""
        self.manifest.require("inspect", needed_by)
        current = dataset_fingerprint(self.config.data_root())
        if current != self.manifest.dataset_fingerprint:
            raise StageDependencyMissing(
                "the dataset changed since inspect, rerun inspect before "
                "{}".format(needed_by)
            )

    def _stage(self, stage, digest, produce):
        if not self.force and self.manifest.is_current(stage, digest):
            logger.info("%s: up to date, skipped", stage)
            return False
        with Timer() as t:
            artifacts = produce()
        self.manifest.config = self.config.snapshot()
        self.manifest.record_stage(stage, digest, artifacts)
        self.manifest.save()
        logger.info("%s: done in %.3fs", stage, t.elapsed)
        return True

    def _upstream(self, *names):
        return self.manifest.stable_hashes(names)

    # loaders of earlier stage outputs

    def load_metric_subset(self):
        return MetricSubset.from_dict(
            load_config_file(self.path("metrics.yml"))
        )

    def load_graph(self):
        return SimilarityGraph.load(self.path("graph.csv"))

    def load_profile(self):
        return SimilarityProfile.load(self.path("profile.npz"))

    def load_cluster_map(self):
        return ClusterMap.load(self.path("clusters.yml"))

    def load_plan(self):
        return TrainingPlan.load(self.path("plan.yml"))

    def load_run(self, strategy):
        return StrategyRun.load(self.path("models", strategy))

    def trained_strategies(self, names=None):
        if names is None:
            names = [
                n
                for n in self.config.strategy_names()
                if self.manifest.has_stage(train_stage(n))
            ]
            if not names:
                raise StageDependencyMissing(
                    "no trained strategy, run train first"
                )
        else:
            names = self.config.strategy_names(names)
        return names

    def strategy_config(self, datasets):
        subset = None
        if self.config["data"]["model_features"] == "selected":
            self.manifest.require("select-metrics", "train")
            subset = self.load_metric_subset()
        return self.config.get_strategy_config(datasets, subset)

    # stages

    def inspect(self):
        data = self.config["data"]
        root = self.config.data_root()
        fingerprint = dataset_fingerprint(root)
        digest = inputs_hash(stage="inspect", data=data, dataset=fingerprint)

        def produce():
            report = inspection_report(
                self.datasets, fingerprint, data["layout"]
            )
            self.manifest.dataset_fingerprint = fingerprint
            save_yaml_file(self.path("inspect.yml"), report)
            self.manifest.add_artifact("inspect", "inspect.yml")
            return ["inspect"]

        return self._stage("inspect", digest, produce)

    def select_metrics(self):
        self.check_dataset("select-metrics")
        digest = inputs_hash(
            stage="select-metrics",
            data=self.config["data"],
            upstream=self._upstream("inspect"),
        )

        def produce():
            subset = self.config.get_metric_subset(self.datasets)
            save_yaml_file(self.path("metrics.yml"), subset.to_dict())
            atomic_write_text(
                self.path("variance_of_mean.csv"), subset.variance_csv()
            )
            self.manifest.add_artifact("metrics", "metrics.yml")
            self.manifest.add_artifact(
                "variance_of_mean", "variance_of_mean.csv"
            )
            return ["metrics", "variance_of_mean"]

        return self._stage("select-metrics", digest, produce)

    def similarity(self):
        self.manifest.require("select-metrics", "similarity")
        self.check_dataset("similarity")
        digest = inputs_hash(
            stage="similarity",
            similarity=self.config["similarity"],
            full_minmax=self.config["data"]["full_minmax"],
            upstream=self._upstream("inspect", "metrics"),
        )

        def produce():
            profile = self.config.get_similarity_profile(
                self.datasets, self.load_metric_subset()
            )
            create_dir(self.path("profile.npz"))
            profile.save(self.path("profile.npz"))
            profile.graph().save(self.path("graph.csv"))
            self.manifest.add_artifact("graph", "graph.csv")
            # npz members carry the zip write time
            self.manifest.add_artifact(
                "profile", "profile.npz", volatile=True
            )
            return ["graph", "profile"]

        return self._stage("similarity", digest, produce)

    def cluster(self, k=None):
        self.manifest.require("similarity", "cluster")
        if k is None:
            k = self.config["clustering"]["k"]
        digest = inputs_hash(
            stage="cluster", k=k, upstream=self._upstream("graph")
        )

        def produce():
            cluster_map = cluster_devices(self.load_graph(), k)
            cluster_map.save(self.path("clusters.yml"))
            self.manifest.add_artifact("clusters", "clusters.yml")
            return ["clusters"]

        return self._stage("cluster", digest, produce)

    def plan(self):
        self.manifest.require("cluster", "plan")
        digest = inputs_hash(
            stage="plan", upstream=self._upstream("graph", "clusters")
        )

        def produce():
            plan = self.config.get_training_plan(
                self.load_graph(), self.load_cluster_map()
            )
            plan.save(self.path("plan.yml"))
            self.manifest.add_artifact("plan", "plan.yml")
            return ["plan"]

        return self._stage("plan", digest, produce)

    def _add_run_artifacts(self, strategy):
        rel = os.path.join("models", strategy)
        self.manifest.add_artifact(
            "models:" + strategy, rel, exclude=MODEL_VOLATILE_FILES
        )
        names = ["models:" + strategy]
        for f in MODEL_VOLATILE_FILES:
            name = "{}:{}".format(os.path.splitext(f)[0], strategy)
            self.manifest.add_artifact(
                name, os.path.join(rel, f), volatile=True
            )
            names.append(name)
        return names

    def train_one(self, strategy):
        stage = train_stage(strategy)
        upstream = ["inspect"]
        if needs_clusters(strategy):
            self.manifest.require("cluster", stage)
            upstream.append("clusters")
        if needs_plan(strategy):
            self.manifest.require("plan", stage)
            upstream.append("plan")
        if self.config["data"]["model_features"] == "selected":
            upstream.append("metrics")
        self.check_dataset(stage)
        data = self.config["data"]
        strategy_section = dict(self.config["strategy"])
        del strategy_section["names"]
        digest = inputs_hash(
            stage=stage,
            model=self.config["model"],
            strategy=strategy_section,
            window_size=data["window_size"],
            stride=data["stride"],
            model_features=data["model_features"],
            seed=self.config.seed,
            upstream=self._upstream(*upstream),
        )

        def produce():
            datasets = self.datasets
            cluster_map = plan = None
            if needs_clusters(strategy):
                cluster_map = self.load_cluster_map()
            if needs_plan(strategy):
                plan = self.load_plan()
            run = run_strategy(
                strategy,
                datasets,
                self.strategy_config(datasets),
                cluster_map,
                plan,
            )
            run.save(self.path("models", strategy))
            return self._add_run_artifacts(strategy)

        return self._stage(stage, digest, produce)

    def train(self, strategies=None):
        names = self.config.strategy_names(strategies)
        return [self.train_one(n) for n in names]

    def n_clusters(self):
        if not self.manifest.has_stage("cluster"):
            return None
        return len(self.load_cluster_map())

    def evaluate(self, strategies=None):
        names = self.trained_strategies(strategies)
        for n in names:
            self.manifest.require(train_stage(n), "evaluate")
        self.check_dataset("evaluate")
        upstream = ["inspect"] + ["models:" + n for n in names]
        digest = inputs_hash(
            stage="evaluate",
            eval=self.config["eval"],
            strategies=names,
            upstream=self._upstream(*upstream),
        )

        def produce():
            runs = [self.load_run(n) for n in names]
            scores_dir = self.path("scores")
            if os.path.isdir(scores_dir):
                shutil.rmtree(scores_dir)
            report = compare_strategies(
                runs,
                self.datasets,
                self.config.f1_mode,
                scores_dir=scores_dir,
            )
            report.save(self.path("evaluation.csv"))
            self.manifest.add_artifact(
                "evaluation", "evaluation.csv", volatile=True
            )
            self.manifest.add_artifact("scores", "scores")
            return ["evaluation", "scores"]

        return self._stage("evaluate", digest, produce)

    def theoretical(self, strategies, n_devices, n_clusters):
        model = self.config["model"]
        ret = {}
        for s in strategies:
            if s in ("cm", "icptl") and n_clusters is None:
                continue
            ret[s] = theoretical_cost(
                s,
                n_devices,
                n_clusters,
                model["max_epochs"],
                model["transfer_max_epochs"],
            )
        return ret

    def report(self):
        self.manifest.require("evaluate", "report")
        digest = inputs_hash(
            stage="report",
            evaluation=self.manifest.artifact_hash("evaluation"),
        )

        def produce():
            report = EvaluationReport.load(self.path("evaluation.csv"))
            n_devices = len({r.device for r in report.rows})
            report.theoretical = self.theoretical(
                report.order, n_devices, self.n_clusters()
            )
            atomic_write_text(self.path("report.txt"), report.to_table())
            runs = [self.load_run(s) for s in report.order]
            atomic_write_text(
                self.path("loss_curves.csv"), loss_curves_text(runs)
            )
            self.manifest.add_artifact("report", "report.txt", volatile=True)
            self.manifest.add_artifact("loss_curves", "loss_curves.csv")
            return ["report", "loss_curves"]

        return self._stage("report", digest, produce)

    def sweep_k(self, k_range=None, strategies=None):
        """
        Cluster, plan, train and evaluate for every ``K`` of the range.

        :param k_range: ``"a-b"`` or ``"a,b,c"``, the configured
            ``clustering.sweep_k`` (or ``1-N``) when None
        :param strategies: strategies trained per ``K``, ``cm,icptl`` when
            None
        """
        self.manifest.require("similarity", "sweep-k")
        self.check_dataset("sweep-k")
        graph = self.load_graph()
        ks = self.config.get_sweep_k(len(graph), k_range)
        if strategies is None:
            names = ["cm", "icptl"]
        else:
            names = self.config.strategy_names(strategies)
        strategy_section = dict(self.config["strategy"])
        del strategy_section["names"]
        digest = inputs_hash(
            stage="sweep-k",
            ks=ks,
            strategies=names,
            model=self.config["model"],
            strategy=strategy_section,
            data=self.config["data"],
            eval=self.config["eval"],
            seed=self.config.seed,
            upstream=self._upstream("graph", "inspect"),
        )

        def produce():
            datasets = self.datasets
            config = self.strategy_config(datasets)
            lines = [SWEEP_HEADER]
            for k in ks:
                cluster_map = cluster_devices(graph, k)
                plan = TrainingPlan.build(graph, cluster_map)
                runs = [
                    run_strategy(n, datasets, config, cluster_map, plan)
                    for n in names
                ]
                report = compare_strategies(
                    runs, datasets, self.config.f1_mode, n_clusters=k
                )
                for s in report.order:
                    c = report.costs[s]
                    lines.append(
                        "{},{},{},{},{},{},{}".format(
                            k,
                            s,
                            format_float(report.mean_auc(s)),
                            format_float(report.mean_f1(s)),
                            c["models"],
                            c["epochs"],
                            c["wall_ms"],
                        )
                    )
                logger.info("sweep-k: K=%d done", k)
            text = "\n".join(lines) + "\n"
            atomic_write_text(self.path("sweep_k.csv"), text)
            self.manifest.add_artifact(
                "sweep_k", "sweep_k.csv", volatile=True
            )
            return ["sweep_k"]

        return self._stage("sweep-k", digest, produce)

    def fleet_state(self, strategies=None):
        names = self.trained_strategies(strategies)
        for n in names:
            self.manifest.require(train_stage(n), "fleet-event")
        return FleetState(
            self.load_profile(),
            self.load_graph(),
            self.load_cluster_map(),
            self.load_plan(),
            {n: self.load_run(n) for n in names},
        )

    def fleet_event(self, event, device_id, dry_run=False):
        """
        Apply one fleet event to the stored state.

        The new data of an added or drifted device is read from the
        configured dataset root. With ``dry_run`` only
        ``fleet_actions.yml`` is written.

        :return: list of :class:`~tf_edgead.fleet.FleetAction`
        """
        event = parse_event(event)
        for s in ("similarity", "cluster", "plan"):
            self.manifest.require(s, "fleet-event")
        state = self.fleet_state()
        datasets = {}
        dataset = None
        if event != DEVICE_REMOVED:
            datasets = {d.device_id: d for d in self.datasets}
            if device_id not in datasets:
                raise StageDependencyMissing(
                    "no data for {} under {}".format(
                        device_id, self.config.data_root()
                    )
                )
            dataset = datasets[device_id]
        new_state, actions = handle_fleet_event(
            event,
            device_id,
            state,
            dataset,
            self.config["strategy"]["jaccard_threshold"],
        )
        save_yaml_file(
            self.path("fleet_actions.yml"),
            {
                "event": event,
                "device": device_id,
                "dry_run": bool(dry_run),
                "actions": [a.to_dict() for a in actions],
                "clusters": new_state.cluster_map.to_dict(),
            },
        )
        self.manifest.add_artifact("fleet_actions", "fleet_actions.yml")
        if dry_run:
            self.manifest.save()
            return actions
        if actions:
            if not datasets:
                datasets = {d.device_id: d for d in self.datasets}
            config = self.strategy_config(self.datasets)
            new_state = apply_actions(new_state, actions, datasets, config)
        self._store_state(new_state)
        return actions

    def _store_state(self, state):
        state.profile.save(self.path("profile.npz"))
        state.graph.save(self.path("graph.csv"))
        state.cluster_map.save(self.path("clusters.yml"))
        state.plan.save(self.path("plan.yml"))
        self.manifest.add_artifact("profile", "profile.npz", volatile=True)
        self.manifest.add_artifact("graph", "graph.csv")
        self.manifest.add_artifact("clusters", "clusters.yml")
        self.manifest.add_artifact("plan", "plan.yml")
        for name, run in sorted(state.runs.items()):
            run.save(self.path("models", name))
            self._add_run_artifacts(name)
        self.manifest.dataset_fingerprint = dataset_fingerprint(
            self.config.data_root()
        )
        if self._datasets is not None:
            save_yaml_file(
                self.path("inspect.yml"),
                inspection_report(
                    self._datasets,
                    self.manifest.dataset_fingerprint,
                    self.config["data"]["layout"],
                ),
            )
            self.manifest.add_artifact("inspect", "inspect.yml")
        self.manifest.drop_stages(["evaluate", "report", "sweep-k"])
        self.manifest.save()
        logger.info("fleet state stored in %s", self.run_dir)
