"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"AESCKPT\\0"
    8       4     format version (uint32, currently 1)
    12      8     header length H (uint64)
    20      H     header, UTF-8 JSON (keys sorted, no whitespace)
    20+H    P     payload: arrays concatenated in header order, float64 LE, C order
    20+H+P  32    SHA-256 over bytes [0, 20+H+P)

The header holds ``encoder`` (EncoderConfig fields), ``normalizer``
(``mean``/``std`` lists in PQ, PC, CE, CU order), ``arrays`` (list of
``[name, shape]`` in payload order), and optionally ``train`` (TrainConfig
fields plus ``step``). Model parameters come first in their declared order;
when optimizer state is present, ``adam.m.<name>`` and ``adam.v.<name>``
follow in the same order.
"""

import hashlib
import json
import os
import struct

import numpy as np

from .errors import CheckpointError
from .model import EncoderConfig, ModelParams, Normalizer, param_shapes

MAGIC = b"AESCKPT\0"
VERSION = 1
_FIXED = struct.Struct("<8sIQ")


def _pack(header, arrays):
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    body = _FIXED.pack(MAGIC, VERSION, len(head)) + head + payload
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, params, state=None, train_cfg=None):
    """Write ``params`` (and optionally a TrainState's optimizer state)."""
    cfg = params.config
    names = [n for n, _ in param_shapes(cfg)]
    entries = [(n, params.arrays[n]) for n in names]
    train = None
    if state is not None:
        entries += [(f"adam.m.{n}", state.adam.m[n]) for n in names]
        entries += [(f"adam.v.{n}", state.adam.v[n]) for n in names]
        train = {"step": state.step, **(train_cfg.to_dict() if train_cfg is not None else {})}
    header = {
        "encoder": cfg.to_dict(),
        "normalizer": {"mean": params.normalizer.mean.tolist(), "std": params.normalizer.std.tolist()},
        "arrays": [[n, list(a.shape)] for n, a in entries],
    }
    if train is not None:
        header["train"] = train
    blob = _pack(header, [a for _, a in entries])
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class Checkpoint:
    def __init__(self, params, header, extra_arrays):
        self.params = params
        self.header = header
        self.extra_arrays = extra_arrays

    @property
    def step(self):
        return self.header.get("train", {}).get("step", 0)

    def train_state(self):
        """Rebuild a resumable TrainState; requires saved optimizer state."""
        from .training import AdamState, TrainState

        names = [n for n, _ in param_shapes(self.params.config)]
        try:
            m = {n: self.extra_arrays[f"adam.m.{n}"] for n in names}
            v = {n: self.extra_arrays[f"adam.v.{n}"] for n in names}
        except KeyError:
            raise CheckpointError("checkpoint carries no optimizer state") from None
        return TrainState(self.params, AdamState(m, v), self.step)

    def train_config(self):
        from .training import TrainConfig

        train = dict(self.header.get("train", {}))
        train.pop("step", None)
        return TrainConfig.from_dict(train) if train else None


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _FIXED.size + 32:
        raise CheckpointError("checkpoint too short")
    body, digest = blob[:-32], blob[-32:]
    magic, version, hlen = _FIXED.unpack_from(body, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; file is corrupt")
    header = json.loads(body[_FIXED.size : _FIXED.size + hlen].decode("utf-8"))
    cfg = EncoderConfig.from_dict(header["encoder"])
    dtype = np.dtype(cfg.dtype)
    pos = _FIXED.size + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(body):
            raise CheckpointError("payload shorter than header declares")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).astype(dtype)
        pos = end
    if pos != len(body):
        raise CheckpointError("trailing bytes after payload")
    names = [n for n, _ in param_shapes(cfg)]
    missing = [n for n in names if n not in arrays]
    if missing:
        raise CheckpointError(f"missing parameters: {missing[:5]}")
    norm = header["normalizer"]
    params = ModelParams(cfg, {n: arrays[n] for n in names}, Normalizer(norm["mean"], norm["std"]))
    extra = {k: v for k, v in arrays.items() if k not in params.arrays}
    return Checkpoint(params, header, extra)
