import json
import os

import pytest

from tf_edgead.run_manifest import *
from tf_edgead.utils import atomic_write_text


def _manifest(tmp_path):
    run_dir = str(tmp_path / "run")
    manifest = RunManifest.load(run_dir, "run")
    atomic_write_text(os.path.join(run_dir, "a.txt"), "a")
    atomic_write_text(os.path.join(run_dir, "b.txt"), "b")
    manifest.add_artifact("a", "a.txt")
    manifest.add_artifact("b", "b.txt", volatile=True)
    manifest.record_stage("one", "digest", ["a", "b"])
    manifest.save()
    return manifest


def test_save_load(tmp_path):
    manifest = _manifest(tmp_path)
    loaded = RunManifest.load(manifest.run_dir, "other")
    assert loaded.run_id == "run"
    assert loaded.to_dict() == manifest.to_dict()
    assert loaded.stable_hashes(["a", "b", "c"]) == {
        "a": manifest.artifact_hash("a")
    }
    loaded.verify()


def test_is_current(tmp_path):
    manifest = _manifest(tmp_path)
    assert manifest.is_current("one", "digest")
    assert not manifest.is_current("one", "other")
    assert not manifest.is_current("two", "digest")
    atomic_write_text(os.path.join(manifest.run_dir, "a.txt"), "changed")
    assert not manifest.is_current("one", "digest")
    with pytest.raises(ArtifactCorrupt):
        manifest.verify_artifact("a")
    with pytest.raises(ArtifactCorrupt):
        manifest.require("one", "two")
    os.remove(os.path.join(manifest.run_dir, "b.txt"))
    with pytest.raises(ArtifactCorrupt):
        manifest.verify_artifact("b")


def test_require(tmp_path):
    manifest = _manifest(tmp_path)
    manifest.require("one", "two")
    with pytest.raises(StageDependencyMissing) as e:
        manifest.require("zero", "two")
    assert e.value.exit_status == 2
    assert e.value.code == "StageDependencyMissing"
    manifest.drop_stages(["one", "missing"])
    assert not manifest.has_stage("one")
    assert manifest.artifacts == {}


def test_inputs_hash():
    assert inputs_hash(a=1, b=[1, 2]) == inputs_hash(b=[1, 2], a=1)
    assert inputs_hash(a=1) != inputs_hash(a=2)


def test_bad_manifest(tmp_path):
    run_dir = str(tmp_path)
    with open(os.path.join(run_dir, "manifest.json"), "w") as f:
        f.write("{not json")
    with pytest.raises(ArtifactCorrupt):
        RunManifest.load(run_dir, "x")
    with open(os.path.join(run_dir, "manifest.json"), "w") as f:
        json.dump({"version": 99}, f)
    with pytest.raises(ArtifactCorrupt):
        RunManifest.load(run_dir, "x")
