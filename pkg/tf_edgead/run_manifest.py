"""
Record of what a run directory contains and how it was produced.

``manifest.json`` lists every artifact with its content hash and every
finished stage with the hash of its inputs. A stage whose inputs hash is
unchanged and whose artifacts still match is skipped.
"""
import datetime
import json
import logging
import os

from .errors import EdgeADError, UsageError
from .utils import atomic_write_text, sha256_bytes, sha256_path

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


class StageDependencyMissing(UsageError, RuntimeError):
    pass


class ArtifactCorrupt(EdgeADError, RuntimeError):
    pass


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def inputs_hash(**parts):
    """Hash of JSON serializable stage inputs."""
    text = json.dumps(parts, sort_keys=True, default=str)
    return sha256_bytes(text.encode("utf-8"))


class RunManifest:
    """
    :param run_dir: directory ``<out>/<run_id>``, artifact paths are
        relative to it
    """

    def __init__(self, run_dir, run_id, data=None):
        self.run_dir = run_dir
        data = dict(data or {})
        self.run_id = run_id
        self.config = data.get("config", {})
        self.dataset_fingerprint = data.get("dataset_fingerprint")
        self.artifacts = dict(data.get("artifacts", {}))
        self.stages = dict(data.get("stages", {}))
        self.created = data.get("created", _now())
        self.updated = data.get("updated", self.created)

    @property
    def path(self):
        return os.path.join(self.run_dir, MANIFEST_NAME)

    @staticmethod
    def load(run_dir, run_id):
        path = os.path.join(run_dir, MANIFEST_NAME)
        if not os.path.exists(path):
            return RunManifest(run_dir, run_id)
        try:
            with open(path) as f:
                data = json.load(f)
        except ValueError as e:
            raise ArtifactCorrupt("{} is not valid JSON: {}".format(path, e))
        if data.get("version") != FORMAT_VERSION:
            raise ArtifactCorrupt(
                "{} has version {}".format(path, data.get("version"))
            )
        return RunManifest(run_dir, data.get("run_id", run_id), data)

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "run_id": self.run_id,
            "config": self.config,
            "dataset_fingerprint": self.dataset_fingerprint,
            "artifacts": self.artifacts,
            "stages": self.stages,
            "created": self.created,
            "updated": self.updated,
        }

    def save(self):
        self.updated = _now()
        text = json.dumps(self.to_dict(), sort_keys=True, indent=2)
        atomic_write_text(self.path, text + "\n")

    def _hash(self, rel_path, exclude=()):
        path = os.path.join(self.run_dir, rel_path)
        if not os.path.exists(path):
            raise ArtifactCorrupt("artifact {} is missing".format(rel_path))
        return sha256_path(path, exclude)

    def add_artifact(self, name, rel_path, volatile=False, exclude=()):
        """
        Record ``rel_path`` (file or directory) under ``name``.

        :param volatile: content carries wall clock measurements and is
            expected to differ between reruns
        :param exclude: file names left out of a directory hash
        """
        self.artifacts[name] = {
            "path": rel_path.replace(os.sep, "/"),
            "sha256": self._hash(rel_path, exclude),
            "volatile": bool(volatile),
            "exclude": sorted(exclude),
        }

    def artifact_path(self, name):
        return os.path.join(self.run_dir, self.artifacts[name]["path"])

    def verify_artifact(self, name):
        if name not in self.artifacts:
            raise ArtifactCorrupt("artifact {} is not recorded".format(name))
        a = self.artifacts[name]
        actual = self._hash(a["path"], a.get("exclude", ()))
        if actual != a["sha256"]:
            raise ArtifactCorrupt(
                "artifact {} does not match its recorded hash".format(
                    a["path"]
                )
            )

    def verify(self):
        for name in sorted(self.artifacts):
            self.verify_artifact(name)

    def artifact_hash(self, name):
        return self.artifacts[name]["sha256"]

    def stable_hashes(self, names):
        """Hashes of the non volatile artifacts among ``names``."""
        return {
            n: self.artifacts[n]["sha256"]
            for n in sorted(names)
            if n in self.artifacts and not self.artifacts[n]["volatile"]
        }

    def has_stage(self, stage):
        return stage in self.stages

    def require(self, stage, needed_by):
        if stage not in self.stages:
            raise StageDependencyMissing(
                "{} needs the {} stage, run it first".format(needed_by, stage)
            )
        for name in self.stages[stage]["artifacts"]:
            self.verify_artifact(name)

    def is_current(self, stage, digest):
        """Stage finished with the same inputs and untouched outputs."""
        info = self.stages.get(stage)
        if info is None or info["inputs_hash"] != digest:
            return False
        try:
            for name in info["artifacts"]:
                self.verify_artifact(name)
        except ArtifactCorrupt as e:
            logger.info("rerunning %s: %s", stage, e)
            return False
        return True

    def record_stage(self, stage, digest, artifacts):
        self.stages[stage] = {
            "inputs_hash": digest,
            "artifacts": sorted(artifacts),
            "finished": _now(),
        }

    def drop_stages(self, stages):
        for s in stages:
            info = self.stages.pop(s, None)
            if info is None:
                continue
            for name in info["artifacts"]:
                self.artifacts.pop(name, None)
