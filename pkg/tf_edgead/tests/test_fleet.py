import pytest

from tf_edgead.clustering import (
    TrainingPlan,
    UnknownDevice,
    cluster_devices,
    jaccard_change,
    nearest_neighbor,
)
from tf_edgead.data import KEPT, MetricRationale, MetricSubset
from tf_edgead.fleet import *
from tf_edgead.similarity import SimilarityProfile
from tf_edgead.strategies import (
    GLOBAL_KEY,
    available_strategies,
    run_strategy,
    train_pooled,
)

from .common import small_fleet, tiny_strategy_config

THRESHOLD = 0.25


def _subset(m=3):
    rationale = {i: MetricRationale(0.0, KEPT) for i in range(m)}
    return MetricSubset(range(m), rationale)


@pytest.fixture(scope="module")
def fleet():
    """Five devices in service and a sixth one waiting to join."""
    datasets = small_fleet(n_devices=6, n_clusters=2).datasets
    active = datasets[:5]
    profile = SimilarityProfile.fit(active, _subset())
    graph = profile.graph()
    cluster_map = cluster_devices(graph, 2)
    plan = TrainingPlan.build(graph, cluster_map)
    config = tiny_strategy_config()
    runs = {
        name: run_strategy(name, active, config, cluster_map, plan)
        for name in available_strategies()
    }
    state = FleetState(profile, graph, cluster_map, plan, runs)
    return datasets, state, config


def _retrain(before, after):
    if jaccard_change(before, after) > THRESHOLD and after:
        return [
            FleetAction(RETRAIN_CLUSTER, "cm", min(after), members=after)
        ]
    return []


def test_device_added(fleet):
    datasets, state, config = fleet
    new = datasets[5]
    new_state, actions = handle_fleet_event(
        DEVICE_ADDED, new.device_id, state, new, THRESHOLD
    )
    assert new.device_id in new_state.graph
    assert len(new_state.graph.edges()) == 15
    neighbor, _ = nearest_neighbor(
        new_state.graph, new.device_id, among=state.graph.vertices
    )
    cm = new_state.cluster_map
    members = cm.members(cm.cluster_of(new.device_id))
    assert neighbor in members
    expected = _retrain(members - {new.device_id}, members)
    expected += [
        FleetAction(TRANSFER_TRAIN, "icptl", new.device_id, source=neighbor),
        FleetAction(TRAIN_DEVICE, "mpd", new.device_id),
    ]
    assert actions == expected
    assert new_state.runs["gm"].routing[new.device_id] == GLOBAL_KEY

    by_id = {d.device_id: d for d in datasets}
    applied = apply_actions(new_state, actions, by_id, config)
    applied.check()
    icptl = applied.runs["icptl"].model_for(new.device_id)
    assert icptl.provenance["source_model_id"] == neighbor
    assert icptl.provenance["epochs_run"] == 1
    mpd = applied.runs["mpd"].model_for(new.device_id)
    assert mpd.same_parameters(
        train_pooled([new], config, "mpd", new.device_id)
    )
    old = state.runs["mpd"]
    for i in old.routing:
        assert applied.runs["mpd"].model_for(i) is old.model_for(i)


def test_device_added_below_threshold(fleet):
    datasets, state, _ = fleet
    new = datasets[5]
    new_state, actions = handle_fleet_event(
        DEVICE_ADDED, new.device_id, state, new, jaccard_threshold=1.0
    )
    assert [a.strategy for a in actions] == ["icptl", "mpd"]
    neighbor, _ = nearest_neighbor(
        new_state.graph, new.device_id, among=state.graph.vertices
    )
    cm = new_state.runs["cm"]
    assert cm.routing[new.device_id] == state.runs["cm"].routing[neighbor]
    assert cm.models_trained == state.runs["cm"].models_trained


def test_device_removed(fleet):
    datasets, state, config = fleet
    gone = datasets[0].device_id
    before = state.cluster_map.members(state.cluster_map.cluster_of(gone))
    new_state, actions = handle_fleet_event(
        DEVICE_REMOVED, gone, state, jaccard_threshold=THRESHOLD
    )
    new_state.check()
    assert gone not in new_state.graph
    assert actions == _retrain(before, before - {gone})
    for run in new_state.runs.values():
        assert gone not in run.routing
    assert len(new_state.runs["mpd"].models) == 4
    by_id = {d.device_id: d for d in datasets}
    applied = apply_actions(new_state, actions, by_id, config)
    applied.check()
    for i in before - {gone}:
        key = applied.runs["cm"].routing[i]
        trained_on = sorted(before - {gone}) if actions else sorted(before)
        assert applied.runs["cm"].models[key].provenance["devices"] == (
            trained_on
        )


def test_device_drifted(fleet):
    datasets, state, config = fleet
    cm = state.cluster_map
    drifting = datasets[0].device_id
    other = next(
        d
        for d in datasets[:5]
        if cm.cluster_of(d.device_id) != cm.cluster_of(drifting)
    )
    drifted = other.renamed(drifting)
    new_state, actions = handle_fleet_event(
        DEVICE_DRIFTED, drifting, state, drifted, THRESHOLD
    )
    new_state.check()
    assert new_state.graph.weight(drifting, other.device_id) == 0.0
    new_map = new_state.cluster_map
    assert new_map.cluster_of(drifting) == new_map.cluster_of(other.device_id)
    source = cm.members(cm.cluster_of(drifting))
    dest = new_map.members(new_map.cluster_of(drifting))
    expected = _retrain(source, source - {drifting})
    expected += _retrain(dest - {drifting}, dest)
    expected.append(
        FleetAction(
            TRANSFER_TRAIN, "icptl", drifting, source=other.device_id
        )
    )
    assert actions == expected

    by_id = {d.device_id: d for d in datasets[:5]}
    by_id[drifting] = drifted
    applied = apply_actions(new_state, actions, by_id, config)
    applied.check()
    model = applied.runs["icptl"].model_for(drifting)
    assert model.provenance["source_model_id"] == other.device_id


def test_device_drifted_in_place(fleet):
    datasets, state, _ = fleet
    cm = state.cluster_map
    same = next(
        d
        for d in datasets[:5]
        if cm.cluster_of(nearest_neighbor(state.graph, d.device_id)[0])
        == cm.cluster_of(d.device_id)
    )
    new_state, actions = handle_fleet_event(
        DEVICE_DRIFTED, same.device_id, state, same, THRESHOLD
    )
    assert actions == []
    assert new_state.cluster_map == state.cluster_map
    assert new_state.graph == state.graph


def test_fleet_errors(fleet):
    datasets, state, _ = fleet
    with pytest.raises(StaleState):
        handle_fleet_event(
            DEVICE_ADDED, datasets[0].device_id, state, datasets[0]
        )
    with pytest.raises(ValueError):
        handle_fleet_event(DEVICE_ADDED, "new", state, None)
    with pytest.raises(UnknownDevice):
        handle_fleet_event(DEVICE_REMOVED, "missing", state)
    with pytest.raises(UnknownDevice):
        handle_fleet_event(DEVICE_DRIFTED, "missing", state, datasets[5])
    with pytest.raises(ValueError):
        handle_fleet_event("device_lost", datasets[0].device_id, state)
    runs = dict(state.runs)
    runs["gm"] = runs["gm"].replace(drop=[datasets[0].device_id])
    with pytest.raises(StaleState):
        handle_fleet_event(
            DEVICE_REMOVED, datasets[1].device_id, state.replace(runs=runs)
        )


def test_fleet_action_dict():
    a = FleetAction(RETRAIN_CLUSTER, "cm", "b", members=["c", "b"])
    assert a.to_dict() == {
        "kind": "retrain_cluster",
        "strategy": "cm",
        "target": "b",
        "members": ["b", "c"],
    }
    t = FleetAction(TRANSFER_TRAIN, "icptl", "x", source="y")
    assert t.to_dict()["source"] == "y"
    assert "members" not in t.to_dict()
