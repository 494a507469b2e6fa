"""
Binary model container.

.. code::

    b"TFEDGEAD-MODEL\\n"            magic
    uint32 little endian           format version
    uint64 little endian           header length
    JSON header (sorted keys)      config, normalization, provenance,
                                   tensor table (name, shape, offset)
    float64 little endian tensors  row-major, in tensor table order

Wall time is not written, so equal training gives equal bytes.
"""
import json
import struct

import numpy as np

from ..data import NormalizationStats
from ..errors import EdgeADError
from ..utils import atomic_write_bytes
from .autoencoder import AutoencoderConfig, TrainedModel

MAGIC = b"TFEDGEAD-MODEL\n"
VERSION = 1
VOLATILE_PROVENANCE = ("wall_time",)


class ModelFileError(EdgeADError, ValueError):
    pass


def model_to_bytes(model):
    tensors = []
    offset = 0
    for name, p in zip(model.tensor_names(), model.parameters):
        tensors.append(
            {"name": name, "shape": list(p.shape), "offset": offset}
        )
        offset += p.size * 8
    provenance = {
        k: v
        for k, v in model.provenance.items()
        if k not in VOLATILE_PROVENANCE
    }
    header = {
        "model_id": model.model_id,
        "config": model.config.to_dict(),
        "normalization": None
        if model.normalization is None
        else model.normalization.to_dict(),
        "provenance": provenance,
        "tensors": tensors,
    }
    header = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(
        np.ascontiguousarray(p, dtype="<f8").tobytes()
        for p in model.parameters
    )
    return (
        MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + body
    )


def model_from_bytes(data, name="<bytes>"):
    if not data.startswith(MAGIC):
        raise ModelFileError("{} is not a model file".format(name))
    pos = len(MAGIC)
    try:
        version, n_header = struct.unpack_from("<IQ", data, pos)
    except struct.error:
        raise ModelFileError("{}: truncated header".format(name))
    if version != VERSION:
        raise ModelFileError(
            "{}: format version {} not supported".format(name, version)
        )
    pos += struct.calcsize("<IQ")
    try:
        header = json.loads(data[pos : pos + n_header].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise ModelFileError("{}: bad header ({})".format(name, e))
    body = data[pos + n_header :]
    params = []
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        end = t["offset"] + count * 8
        if end > len(body):
            raise ModelFileError(
                "{}: tensor {} is truncated".format(name, t["name"])
            )
        params.append(
            np.frombuffer(body[t["offset"] : end], dtype="<f8")
            .astype(np.float64)
            .reshape(t["shape"])
        )
    normalization = header["normalization"]
    if normalization is not None:
        normalization = NormalizationStats.from_dict(normalization)
    return TrainedModel(
        params,
        AutoencoderConfig.from_dict(header["config"]),
        normalization,
        header["provenance"],
        header["model_id"],
    )


def save_model(model, path):
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ModelFileError("cannot read {}: {}".format(path, e))
    return model_from_bytes(data, path)
