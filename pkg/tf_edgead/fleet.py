"""
Fleet changes after the initial training: devices joining, leaving or
drifting away from their normal behaviour.

:func:`handle_fleet_event` updates the similarity graph, the clusters and
the routing and returns the retraining work; :func:`apply_actions` does
that work.

- added: the device joins the cluster of its nearest neighbor. ICPTL
  fine tunes the neighbor's model for it; CM retrains the cluster model
  only if the membership change exceeds the Jaccard threshold, otherwise
  the device is routed to the existing cluster model.
- removed: ICPTL needs nothing; CM retrains under the same threshold.
- drifted: the device's edges are recomputed; if it moves to another
  cluster ICPTL fine tunes from the new nearest neighbor and CM checks the
  clusters it left and joined.
"""
import logging

from .clustering import (
    MOVED,
    TrainingPlan,
    UnknownDevice,
    jaccard_change,
    nearest_neighbor,
    reassign_device,
    remove_device,
)
from .errors import EdgeADError
from .strategies import GLOBAL_KEY, train_pooled, transfer_to_device

logger = logging.getLogger(__name__)

DEVICE_ADDED = "device_added"
DEVICE_REMOVED = "device_removed"
DEVICE_DRIFTED = "device_drifted"
EVENTS = (DEVICE_ADDED, DEVICE_REMOVED, DEVICE_DRIFTED)

TRANSFER_TRAIN = "transfer_train"
RETRAIN_CLUSTER = "retrain_cluster"
TRAIN_DEVICE = "train_device"


class StaleState(EdgeADError, ValueError):
    pass


class FleetAction:
    """
    One retraining job.

    :param kind: ``transfer_train``, ``retrain_cluster`` or ``train_device``
    :param source: device whose model initializes a transfer
    :param members: devices pooled by a cluster retrain
    """

    def __init__(self, kind, strategy, target, source=None, members=()):
        self.kind = kind
        self.strategy = strategy
        self.target = target
        self.source = source
        self.members = tuple(sorted(members))

    def __eq__(self, other):
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return "FleetAction({})".format(self.to_dict())

    def to_dict(self):
        ret = {
            "kind": self.kind,
            "strategy": self.strategy,
            "target": self.target,
        }
        if self.source is not None:
            ret["source"] = self.source
        if self.members:
            ret["members"] = list(self.members)
        return ret


class FleetState:
    """
    :param profile: :class:`~tf_edgead.similarity.SimilarityProfile`
    :param runs: dictionary ``strategy -> StrategyRun``
    """

    def __init__(self, profile, graph, cluster_map, plan, runs=None):
        self.profile = profile
        self.graph = graph
        self.cluster_map = cluster_map
        self.plan = plan
        self.runs = dict(runs or {})

    def replace(self, **kwargs):
        args = dict(vars(self))
        args.update(kwargs)
        return FleetState(**args)

    def check(self):
        devices = set(self.graph.vertices)
        parts = {
            "profile": set(self.profile.device_ids),
            "clusters": set(self.cluster_map.devices),
        }
        for name, run in self.runs.items():
            parts["run " + name] = set(run.routing)
        for name, ids in parts.items():
            if ids != devices:
                raise StaleState(
                    "{} disagrees with the similarity graph on {}".format(
                        name, sorted(ids ^ devices)
                    )
                )


def _cm_key(run, cluster_id, members):
    """Model key for a retrained cluster not used by other devices."""
    others = {k for d, k in run.routing.items() if d not in members}
    key, i = cluster_id, 1
    while key in others:
        key = "{}-r{}".format(cluster_id, i)
        i += 1
    return key


def _cm_check(members_before, members_after, threshold, actions):
    """Append a retrain action when the membership changed enough."""
    if not members_after:
        return False
    change = jaccard_change(members_before, members_after)
    if change > threshold:
        actions.append(
            FleetAction(
                RETRAIN_CLUSTER,
                "cm",
                min(members_after),
                members=members_after,
            )
        )
        return True
    return False


def _added(state, device_id, dataset, threshold):
    if device_id in state.graph:
        raise StaleState("{} is already in the fleet".format(device_id))
    if dataset is None or dataset.device_id != device_id:
        raise ValueError("device data needed for {}".format(device_id))
    profile = state.profile.with_device(dataset)
    graph = state.graph.with_device(device_id, profile.edge_weights(device_id))
    cluster_map, _ = reassign_device(graph, state.cluster_map, device_id)
    neighbor, _ = nearest_neighbor(graph, device_id, state.graph.vertices)
    actions, runs = [], dict(state.runs)
    for name, run in sorted(state.runs.items()):
        if name == "icptl":
            actions.append(
                FleetAction(TRANSFER_TRAIN, name, device_id, source=neighbor)
            )
        elif name == "mpd":
            actions.append(FleetAction(TRAIN_DEVICE, name, device_id))
        elif name == "gm":
            runs[name] = run.replace(routing={device_id: GLOBAL_KEY})
        elif name == "cm":
            after = cluster_map.members(cluster_map.cluster_of(device_id))
            before = after - {device_id}
            if not _cm_check(before, after, threshold, actions):
                runs[name] = run.replace(
                    routing={device_id: run.routing[neighbor]}
                )
    return profile, graph, cluster_map, runs, actions


def _removed(state, device_id, threshold):
    if device_id not in state.graph:
        raise UnknownDevice(device_id)
    before = state.cluster_map.members(state.cluster_map.cluster_of(device_id))
    profile = state.profile.without_device(device_id)
    graph = state.graph.without(device_id)
    cluster_map = remove_device(state.cluster_map, device_id)
    actions, runs = [], dict(state.runs)
    for name, run in sorted(state.runs.items()):
        runs[name] = run.replace(drop=[device_id])
        if name == "cm":
            _cm_check(before, before - {device_id}, threshold, actions)
    return profile, graph, cluster_map, runs, actions


def _drifted(state, device_id, dataset, threshold):
    if device_id not in state.graph:
        raise UnknownDevice(device_id)
    if dataset is None or dataset.device_id != device_id:
        raise ValueError("device data needed for {}".format(device_id))
    old_map = state.cluster_map
    source = old_map.members(old_map.cluster_of(device_id))
    profile = state.profile.with_device(dataset)
    graph = state.graph.with_device(device_id, profile.edge_weights(device_id))
    cluster_map, action = reassign_device(graph, old_map, device_id)
    actions, runs = [], dict(state.runs)
    if action != MOVED:
        return profile, graph, cluster_map, runs, actions
    neighbor, _ = nearest_neighbor(graph, device_id)
    dest = cluster_map.members(cluster_map.cluster_of(device_id))
    for name, run in sorted(state.runs.items()):
        if name == "icptl":
            actions.append(
                FleetAction(TRANSFER_TRAIN, name, device_id, source=neighbor)
            )
        elif name == "cm":
            _cm_check(source, source - {device_id}, threshold, actions)
            if not _cm_check(
                dest - {device_id}, dest, threshold, actions
            ):
                runs[name] = run.replace(
                    routing={device_id: run.routing[neighbor]}
                )
    return profile, graph, cluster_map, runs, actions


def handle_fleet_event(
    event, device_id, state, dataset=None, jaccard_threshold=0.25
):
    """
    Update ``state`` for one fleet event.

    :param event: ``device_added``, ``device_removed`` or
        ``device_drifted``
    :param dataset: new data of the device (added or drifted)
    :return: ``(new FleetState, list of FleetAction)``
    """
    state.check()
    if event == DEVICE_ADDED:
        ret = _added(state, device_id, dataset, jaccard_threshold)
    elif event == DEVICE_REMOVED:
        ret = _removed(state, device_id, jaccard_threshold)
    elif event == DEVICE_DRIFTED:
        ret = _drifted(state, device_id, dataset, jaccard_threshold)
    else:
        raise ValueError("unknown event {}, one of {}".format(event, EVENTS))
    profile, graph, cluster_map, runs, actions = ret
    new_state = FleetState(
        profile,
        graph,
        cluster_map,
        TrainingPlan.build(graph, cluster_map),
        runs,
    )
    logger.info(
        "%s %s: %d actions", event, device_id, len(actions)
    )
    return new_state, actions


def apply_actions(state, actions, datasets, config):
    """
    Run the retraining jobs and route the devices to the new models.

    :param datasets: dictionary ``device_id -> DeviceDataset`` with the
        current data of every device the actions touch
    :param config: :class:`~tf_edgead.strategies.StrategyConfig`
    """
    runs = dict(state.runs)
    for a in actions:
        run = runs[a.strategy]
        if a.kind == TRANSFER_TRAIN:
            model = transfer_to_device(
                run.model_for(a.source),
                datasets[a.target],
                config,
                a.strategy,
                a.target,
            )
            run = run.replace(
                models={a.target: model}, routing={a.target: a.target}
            )
        elif a.kind == TRAIN_DEVICE:
            model = train_pooled(
                [datasets[a.target]], config, a.strategy, a.target
            )
            run = run.replace(
                models={a.target: model}, routing={a.target: a.target}
            )
        elif a.kind == RETRAIN_CLUSTER:
            cluster_id = state.cluster_map.cluster_of(a.members[0])
            key = _cm_key(run, cluster_id, a.members)
            model = train_pooled(
                [datasets[i] for i in a.members], config, a.strategy, key
            )
            run = run.replace(
                models={key: model}, routing={i: key for i in a.members}
            )
        else:
            raise ValueError("unknown action {}".format(a.kind))
        runs[a.strategy] = run
        logger.info("applied %s", a)
    return state.replace(runs=runs)
