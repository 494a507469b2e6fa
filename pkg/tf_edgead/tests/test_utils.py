import os

from tf_edgead.utils import *


def test_atomic_write(tmp_path):
    name = str(tmp_path / "a" / "b" / "c.txt")
    atomic_write_text(name, "x\n")
    atomic_write_text(name, "y\n")
    with open(name) as f:
        assert f.read() == "y\n"
    assert sorted(os.listdir(str(tmp_path / "a" / "b"))) == ["c.txt"]


def test_sha256_path(tmp_path):
    root = str(tmp_path / "root")
    atomic_write_text(os.path.join(root, "a.txt"), "1")
    atomic_write_text(os.path.join(root, "sub", "b.txt"), "2")
    first = sha256_path(root)
    assert sha256_path(root) == first
    assert sha256_path(os.path.join(root, "a.txt")) == sha256_bytes(b"1")
    atomic_write_text(os.path.join(root, "timing.yml"), "3")
    assert sha256_path(root) != first
    assert sha256_path(root, exclude=("timing.yml",)) == first
    os.rename(
        os.path.join(root, "sub", "b.txt"), os.path.join(root, "sub", "c.txt")
    )
    assert sha256_path(root, exclude=("timing.yml",)) != first


def test_derive_seed():
    a = derive_seed(0, "d1,d2")
    assert a == derive_seed(0, "d1,d2")
    assert 0 <= a < 2 ** 31
    assert a != derive_seed(1, "d1,d2")
    assert a != derive_seed(0, "d1")


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(1) == "1"
    assert float(format_float(1 / 3)) == 1 / 3


def test_config_file(tmp_path):
    name = str(tmp_path / "a.yml")
    save_yaml_file(name, {"b": [1, 2], "a": "x"})
    assert load_config_file(name) == {"a": "x", "b": [1, 2]}
    with open(name) as f:
        assert f.readline() == "a: x\n"
    json_name = str(tmp_path / "a.json")
    atomic_write_text(json_name, '{"a": 1}')
    assert load_config_file(json_name) == {"a": 1}


def test_timer():
    with Timer() as t:
        sum(range(1000))
    assert t.elapsed >= 0
