"""Binary model file.

Layout (all little-endian)::

    b"EGM1"            magic
    u16                format version
    u32                header length N
    N bytes            UTF-8 JSON header (sorted keys): metadata, networks
                       (name, input shape, layer specs) and the array table
    f64, f64           label scale (min_cm, max_cm)
    f64[...]           every array of every network in declaration order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import LayerSpec
from .network import Network

MAGIC = b"EGM1"
VERSION = 1


class ModelFileError(ValueError):
    pass


def _shape_json(shape):
    if shape and isinstance(shape[0], tuple):
        return [list(s) for s in shape]
    return list(shape)


def _shape_from_json(v):
    if v and isinstance(v[0], list):
        return tuple(tuple(s) for s in v)
    return tuple(v)


def model_bytes(meta: dict, label_scale: tuple[float, float], networks: dict[str, Network]) -> bytes:
    nets = []
    table = []
    arrays = []
    dtype = None
    for name, net in networks.items():
        nets.append(
            {
                "name": name,
                "input_shape": _shape_json(net.input_shape),
                "specs": [s.to_json() for s in net.specs],
            }
        )
        for layer, pname, arr in net.named_arrays():
            table.append([name, layer, pname, list(arr.shape)])
            arrays.append(arr)
            dtype = dtype or arr.dtype
    header = {
        "meta": meta,
        "networks": nets,
        "arrays": table,
        "dtype": str(np.dtype(dtype or np.float64)),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(hbytes)), hbytes, struct.pack("<dd", *label_scale)]
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_model(path, meta: dict, label_scale, networks: dict[str, Network]) -> Path:
    path = Path(path)
    path.write_bytes(model_bytes(meta, tuple(label_scale), networks))
    return path


def load_model_bytes(data: bytes):
    """Returns (meta, label_scale, networks)."""
    if len(data) < 10 or data[:4] != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise ModelFileError(f"model file version {version}, expected {VERSION}")
    off = 10
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupt model header: {exc}") from None
    off += hlen
    if len(data) < off + 16:
        raise ModelFileError("truncated model file")
    label_scale = struct.unpack_from("<dd", data, off)
    off += 16
    dtype = np.dtype(header["dtype"])
    networks = {}
    for nd in header["networks"]:
        specs = [LayerSpec.from_json(s) for s in nd["specs"]]
        networks[nd["name"]] = Network(specs, _shape_from_json(nd["input_shape"]))
    for name, layer, pname, shape in header["arrays"]:
        n = int(np.prod(shape))
        if len(data) < off + 8 * n:
            raise ModelFileError("truncated model file")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(dtype)
        off += 8 * n
        net = networks[name]
        bucket = net.state[layer] if pname.startswith("running_") else net.params[layer]
        bucket[pname] = arr
    if off != len(data):
        raise ModelFileError(f"{len(data) - off} trailing bytes in model file")
    return header["meta"], label_scale, networks


def load_model(path):
    return load_model_bytes(Path(path).read_bytes())
