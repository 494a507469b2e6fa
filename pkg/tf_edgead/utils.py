"""
File, hashing and timing helpers shared by the stages.
"""
import hashlib
import json
import logging
import os
import tempfile
import time

import yaml

logger = logging.getLogger(__name__)


def _load_json_file(name):
    with open(name) as f:
        return json.load(f)


def _load_yaml_file(name):
    with open(name) as f:
        return yaml.safe_load(f)


def load_config_file(name):
    """
    Load a configuration or report file.

    :param name: File name. Either yml file or json file.
    :return: Dictionary read from the file.
    """
    if name.endswith("json"):
        return _load_json_file(name)
    return _load_yaml_file(name)


def save_yaml_file(name, obj):
    """Write ``obj`` as YAML with sorted keys, atomically."""
    text = yaml.safe_dump(obj, sort_keys=True, default_flow_style=False)
    atomic_write_text(name, text)


def create_dir(name):
    """Create the parent directory of ``name``; True if it already existed."""
    dirname = os.path.dirname(name)
    if dirname == "":
        return True
    if not os.path.exists(dirname):
        os.makedirs(dirname, exist_ok=True)
        return False
    return True


def atomic_write_bytes(name, data):
    """
    Write ``data`` into ``name`` through a temporary file in the same
    directory followed by :func:`os.replace`.
    """
    create_dir(name)
    dirname = os.path.dirname(os.path.abspath(name))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp_")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, name)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(name, text):
    atomic_write_bytes(name, text.encode("utf-8"))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(name):
    h = hashlib.sha256()
    with open(name, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_path(path, exclude=()):
    """
    Content hash of a file or a directory tree. Directories hash the sorted
    relative file names together with each file's bytes; file names listed
    in ``exclude`` are skipped.
    """
    if os.path.isfile(path):
        return sha256_file(path)
    h = hashlib.sha256()
    for rel in sorted(iter_files(path)):
        if os.path.basename(rel) in exclude:
            continue
        h.update(rel.replace(os.sep, "/").encode("utf-8"))
        h.update(b"\0")
        h.update(sha256_file(os.path.join(path, rel)).encode("ascii"))
    return h.hexdigest()


def iter_files(root):
    for dirpath, _, files in os.walk(root):
        for f in files:
            yield os.path.relpath(os.path.join(dirpath, f), root)


def derive_seed(seed, key):
    """
    Deterministic 31-bit seed from a global seed and a text key. ``hash()``
    is salted per process, so sha256 is used instead.
    """
    digest = hashlib.sha256("{}:{}".format(seed, key).encode("utf-8"))
    return int.from_bytes(digest.digest()[:4], "big") & 0x7FFFFFFF


def format_float(x):
    """Round-trippable text form used in every text artifact."""
    return "{:.17g}".format(float(x))


class Timer:
    """Context manager measuring wall time in seconds."""

    def __init__(self):
        self.start = None
        self.elapsed = 0.0

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False
