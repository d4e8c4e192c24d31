"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"STKFCKPT"            8-byte magic
    uint32 version         currently 1
    uint64 header_len
    header                 UTF-8 JSON: model kind, config, parameter manifest
    parameter blocks       raw float64 '<f8', C order, at the manifest offsets

Offsets in the manifest are relative to the first byte after the header.
The JSON is written with sorted keys and no whitespace, so saving the same
model twice gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..tensor import Tensor
from .lstm import LSTMBaselineConfig, LSTMModel
from .stockformer import ModelConfig, StockformerModel

MAGIC = b"STKFCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")

_KINDS = {
    "stockformer": (StockformerModel, ModelConfig),
    "lstm": (LSTMModel, LSTMBaselineConfig),
}


def checkpoint_bytes(model) -> bytes:
    manifest = []
    blocks = []
    offset = 0
    for name, t in model.params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        blocks.append(raw)
        offset += len(raw)
    header = {
        "format": "stockformer-checkpoint",
        "model": model.kind,
        "config": model.config.to_dict(),
        "params": manifest,
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hdr)) + hdr + b"".join(blocks)


def save_checkpoint(model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint_bytes(blob: bytes):
    if len(blob) < _PREFIX.size:
        raise DataError("checkpoint truncated")
    magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DataError("not a stockformer checkpoint")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    data_start = start + hlen
    try:
        model_cls, cfg_cls = _KINDS[header["model"]]
    except KeyError:
        raise DataError(f"unknown model kind {header.get('model')!r}") from None
    config = cfg_cls.from_dict(header["config"])
    dtype = np.dtype(getattr(config, "dtype", "float64"))
    params: OrderedDict[str, Tensor] = OrderedDict()
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        begin = data_start + entry["offset"]
        if begin + 8 * count > len(blob):
            raise DataError(f"checkpoint truncated in parameter {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=begin).reshape(shape)
        params[entry["name"]] = Tensor(arr.astype(dtype), requires_grad=True)
    model = model_cls(config)
    if list(model.params) != list(params) or any(model.params[k].shape != params[k].shape for k in params):
        raise DataError("checkpoint parameters do not match the model built from its config")
    model.params = params
    return model


def load_checkpoint(path):
    return load_checkpoint_bytes(Path(path).read_bytes())
