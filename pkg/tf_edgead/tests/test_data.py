import os

import numpy as np
import pytest

from tf_edgead.data import *

from .common import constant_device, small_fleet


def _write(path, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def test_ingest_lossless(tmp_path):
    fleet = small_fleet(n_devices=3, n_clusters=3, n_metrics=4, t_train=1000)
    for d in fleet.datasets:
        save_dataset(d, str(tmp_path))
    datasets = ingest_dataset(str(tmp_path))
    assert len(datasets) == 3
    for a, b in zip(fleet.datasets, datasets):
        assert a.device_id == b.device_id
        assert b.n_metrics == 4
        assert b.train.shape == (4, 1000)
        assert a.train.tobytes() == b.train.tobytes()
        assert a.test.tobytes() == b.test.tobytes()
        assert np.array_equal(a.test_labels, b.test_labels)


def test_ingest_single_dir(tmp_path):
    _write(str(tmp_path / "b.csv"), "1,2\n3,4\n5,6\n")
    _write(str(tmp_path / "a.txt"), "0,0\n1,1\n")
    datasets = ingest_dataset(str(tmp_path), layout="single_dir")
    assert [d.device_id for d in datasets] == ["a", "b"]
    assert np.array_equal(datasets[1].train, [[1, 3, 5], [2, 4, 6]])
    assert datasets[1].test is None


def test_ingest_errors(tmp_path):
    with pytest.raises(MissingFile):
        ingest_dataset(str(tmp_path))
    with pytest.raises(MissingFile):
        ingest_dataset(str(tmp_path / "nothing"))
    _write(str(tmp_path / "train" / "m1.txt"), "1,2\n3,4\n")
    _write(str(tmp_path / "test" / "m1.txt"), "1,2\n3,4\n")
    with pytest.raises(MissingFile):
        ingest_dataset(str(tmp_path))
    _write(str(tmp_path / "test_label" / "m1.txt"), "0\n1\n0\n")
    with pytest.raises(LabelMismatch):
        ingest_dataset(str(tmp_path))
    with pytest.raises(ValueError):
        ingest_dataset(str(tmp_path), layout="unknown")


def test_bad_cells(tmp_path):
    ragged = str(tmp_path / "ragged.txt")
    _write(ragged, "1,2\n3\n")
    with pytest.raises(RaggedRows):
        load_metric_file(ragged)
    text = str(tmp_path / "text.txt")
    _write(text, "1,2\n3,abc\n")
    with pytest.raises(NonNumeric, match="row 2 column 2"):
        load_metric_file(text)
    gap = str(tmp_path / "gap.txt")
    _write(gap, "1,nan\n2,3\n,4\n")
    with pytest.raises(MissingValues):
        load_metric_file(gap)
    with pytest.warns(FilledGapsWarning):
        values, n = load_metric_file(gap, fill_missing=True)
    assert n == 2
    assert np.array_equal(values, [[1, 3], [2, 3], [2, 4]])


def test_dataset_invariants():
    train = np.zeros((2, 5))
    with pytest.raises(LabelMismatch):
        DeviceDataset("a", train, np.zeros((2, 4)), [0, 1, 0])
    with pytest.raises(LabelMismatch):
        DeviceDataset("a", train, np.zeros((2, 3)), [0, 2, 0])
    with pytest.raises(HeterogeneousSchema):
        DeviceDataset("a", train, metric_names=["x", "x"])
    with pytest.raises(MissingValues):
        DeviceDataset("a", np.array([[1.0, np.nan]]))
    d = DeviceDataset("a", train)
    with pytest.raises(ValueError):
        d.train[0, 0] = 1.0


def test_variance_of_mean():
    a = DeviceDataset("a", np.full((1, 4), 0.2))
    b = DeviceDataset("b", np.full((1, 4), 0.8))
    assert np.allclose(variance_of_mean([a, b]), [0.09])
    assert np.all(variance_of_mean([a, a.renamed("c")]) == 0)
    c = DeviceDataset("c", np.zeros((2, 4)))
    with pytest.raises(HeterogeneousSchema):
        variance_of_mean([a, c])


def _collinear_fleet(rng):
    ret = []
    for i, shift in enumerate([0.0, 1.0, 3.0]):
        x = rng.normal(shift, 1.0, size=200)
        ret.append(DeviceDataset("d{}".format(i), np.stack([x, 2 * x + 1])))
    return ret


def test_select_collinear():
    datasets = _collinear_fleet(np.random.default_rng(1))
    subset = select_metrics(datasets, top_n=2)
    assert subset.indices == (1,)
    assert subset.rationale[0].reason == COLLINEAR
    assert subset.rationale[0].collinear_with == 1
    assert select_metrics(datasets[::-1], top_n=2) == subset
    assert "collinear_with:1" in subset.variance_csv()
    assert MetricSubset.from_dict(subset.to_dict()) == subset


def test_select_zero_majority():
    rng = np.random.default_rng(2)
    datasets = []
    for i in range(3):
        zero = np.zeros(100) if i < 2 else rng.uniform(1, 2, 100)
        other = rng.normal(i, 0.1, 100)
        train = np.stack([zero, other])
        datasets.append(DeviceDataset("d{}".format(i), train))
    subset = select_metrics(datasets, top_n=2)
    assert subset.indices == (1,)
    assert subset.rationale[0].reason == ALL_ZERO_MAJORITY
    single = [DeviceDataset(d.device_id, d.train[1:]) for d in datasets]
    assert select_metrics(single, top_n=1).indices == (0,)
    zero_only = [DeviceDataset(d.device_id, d.train[:1]) for d in datasets]
    with pytest.raises(EmptySelection):
        select_metrics(zero_only, top_n=1)
    with pytest.raises(ValueError):
        select_metrics(datasets, top_n=3)


def test_select_low_variance():
    rng = np.random.default_rng(3)
    datasets = [
        DeviceDataset(
            "d{}".format(i),
            np.stack(
                [rng.normal(10 * i, 1, 100), rng.normal(0.01 * i, 1, 100)]
            ),
        )
        for i in range(3)
    ]
    subset = select_metrics(datasets, top_n=1)
    assert subset.indices == (0,)
    assert subset.rationale[1].reason == LOW_VARIANCE


def test_scale_by_range():
    a = DeviceDataset("a", [[0.0, 1.0, 2.0], [5.0, 5.0, 5.0]])
    b = DeviceDataset("b", [[0.0, 2.0, 4.0], [5.0, 5.0, 5.0]])
    subset = MetricSubset(
        [0, 1], {0: MetricRationale(0, KEPT), 1: MetricRationale(0, KEPT)}
    )
    with pytest.warns(DegenerateMetricWarning):
        scaled = scale_by_range([a, b], subset)
    assert np.allclose(scaled.values["a"][0], [0, 0.25, 0.5])
    assert np.allclose(scaled.values["b"][0], [0, 0.5, 1.0])
    assert np.all(scaled.values["a"][1] == 0)
    assert list(scaled.degenerate) == [False, True]


def test_scaled_range_is_one():
    fleet = small_fleet(n_devices=4)
    subset = select_metrics(fleet.datasets, top_n=3)
    for full in [False, True]:
        scaled = scale_by_range(fleet.datasets, subset, full_minmax=full)
        stacked = np.concatenate(
            [scaled.values[i] for i in scaled.device_ids], axis=1
        )
        spread = stacked.max(axis=1) - stacked.min(axis=1)
        assert np.allclose(spread, 1.0, atol=1e-12)
        if full:
            assert np.allclose(stacked.min(axis=1), 0.0, atol=1e-12)


def test_windows():
    d = DeviceDataset("a", np.arange(20.0).reshape((2, 10)))
    assert len(make_windows(d, "train", 10)) == 1
    ws = make_windows(d, "train", 3)
    assert len(ws) == 8
    assert np.array_equal(ws.windows[2], [[2, 3, 4], [12, 13, 14]])
    assert np.array_equal(ws.last_steps(), np.arange(2, 10))
    assert ws.flatten().shape == (8, 6)
    strided = make_windows(d, "train", 3, stride=3)
    assert len(strided) == 3
    assert list(strided.starts()) == [0, 3, 6]
    short = DeviceDataset("b", np.zeros((1, 5)))
    with pytest.raises(WindowTooLong):
        make_windows(short, "train", 6)
    with pytest.raises(MissingFile):
        make_windows(short, "test", 2)


def test_split_and_normalize():
    flat = np.arange(20.0).reshape((10, 2))
    x, v = split_train_val(flat, 0.1)
    assert x.shape[0] == 9 and v.shape[0] == 1
    assert np.array_equal(v, flat[-1:])
    x, v = split_train_val(flat[:1], 0.5)
    assert x.shape[0] == 1 and v.shape[0] == 0
    x, v = split_train_val(flat, 0.0)
    assert v.shape[0] == 0
    a = constant_device("a", [1.0, 2.0])
    b = DeviceDataset("b", [[0.0, 4.0], [2.0, 2.0]])
    stats = normalization_stats([a, b], [0, 1])
    assert np.allclose(stats.mins, [0, 2])
    assert np.allclose(stats.ranges, [4, 1])
    assert np.allclose(stats.apply(b.train), [[0, 1], [0, 0]])
    assert NormalizationStats.from_dict(stats.to_dict()) == stats


def test_fingerprint(tmp_path):
    fleet = small_fleet(n_devices=2, n_clusters=2)
    for d in fleet.datasets:
        save_dataset(d, str(tmp_path))
    first = dataset_fingerprint(str(tmp_path))
    assert first == dataset_fingerprint(str(tmp_path))
    with open(str(tmp_path / "train" / "device-00.txt"), "a") as f:
        f.write("0,0,0\n")
    assert dataset_fingerprint(str(tmp_path)) != first
