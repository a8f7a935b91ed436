"""Binary model checkpoints.

Layout: an 8-byte magic, a little-endian uint32 format version, a
little-endian uint32 header length, a JSON header (config, training seed,
epoch count, and a named array table with shapes and byte offsets), then
the raw arrays as little-endian float64 in table order. Round trips are
bit-exact.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError
from .model import ModelConfig, from_named_arrays, named_arrays

MAGIC = b"TCASTCKP"
VERSION = 1
_HEAD = struct.Struct("<8sII")


@dataclass(frozen=True)
class Checkpoint:
    version: int
    config: ModelConfig
    params: object
    seed: int
    epochs: int


def _raw(a):
    if isinstance(a, ad.Tensor):
        a = a.data
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


def _config_dict(config):
    d = asdict(config)
    d["normalization"] = list(d["normalization"])
    return d


def save_checkpoint(params, config, path, seed=0, epochs=0):
    arrays = {name: _raw(a) for name, a in named_arrays(params).items()}
    table = []
    offset = 0
    for name, arr in arrays.items():
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps({
        "config": _config_dict(config),
        "seed": int(seed),
        "epochs": int(epochs),
        "arrays": table,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for arr in arrays.values():
            fh.write(arr.astype("<f8", copy=False).tobytes())


def _parse_header(blob):
    if len(blob) < _HEAD.size:
        raise CheckpointError(f"truncated checkpoint: {len(blob)} bytes")
    magic, version, header_len = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unknown checkpoint version {version}, expected {VERSION}")
    start = _HEAD.size
    if len(blob) < start + header_len:
        raise CheckpointError("truncated checkpoint: header cut short")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    for key in ("config", "seed", "epochs", "arrays"):
        if key not in header:
            raise CheckpointError(f"corrupt header: missing {key!r}")
    return header, start + header_len


def load_checkpoint(path, expect=None):
    """Read a checkpoint; with expect set, refuse configs that differ from it,
    naming the first differing field."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, data_start = _parse_header(blob)
    cfg_dict = dict(header["config"])
    try:
        cfg_dict["normalization"] = tuple(cfg_dict["normalization"])
        config = ModelConfig(**cfg_dict)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt header: bad config: {exc}") from exc
    if expect is not None:
        want, got = _config_dict(expect), _config_dict(config)
        for field in want:
            if want[field] != got[field]:
                raise CheckpointError(
                    f"config mismatch on {field!r}: checkpoint has {got[field]!r}, "
                    f"expected {want[field]!r}")
    arrays = {}
    data = blob[data_start:]
    for entry in header["arrays"]:
        try:
            name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"corrupt header: bad array entry: {exc}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + count * 8
        if offset < 0 or end > len(data):
            raise CheckpointError(f"truncated checkpoint: array {name!r} out of range")
        arrays[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
    params = from_named_arrays(config, arrays)
    return Checkpoint(version=VERSION, config=config, params=params,
                      seed=int(header["seed"]), epochs=int(header["epochs"]))
