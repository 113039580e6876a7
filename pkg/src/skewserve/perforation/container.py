"""Network files.

Binary layout (little endian)::

    b"SKNW" | u32 version | u32 header_bytes | header (UTF-8 JSON) | float32 payload

The header lists the layer specs; each weight block is referenced by
``{"offset": <float index>, "shape": [...]}`` into the row-major payload.
A ``.json`` path stores the same header with the blocks inlined as lists.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import LayerSpec, Network, ShapeError, TensorShape

MAGIC = b"SKNW"
VERSION = 1


class NetworkFormatError(ValueError):
    pass


def _header(net: Network, inline: bool):
    blocks = []
    offset = 0
    layers = []
    for layer in net.layers:
        entry = {
            "kind": layer.kind,
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "kernel": layer.kernel,
            "stride": layer.stride,
            "activation": layer.activation,
        }
        for name in ("weights", "bias"):
            arr = getattr(layer, name)
            if arr is None:
                continue
            a32 = np.ascontiguousarray(arr, dtype="<f4")
            if inline:
                entry[name] = {"shape": list(a32.shape), "data": [float(v) for v in a32.ravel()]}
            else:
                entry[name] = {"offset": offset, "shape": list(a32.shape)}
                blocks.append(a32.ravel())
                offset += a32.size
        layers.append(entry)
    s = net.input_shape
    header = {
        "format": "skewserve-network",
        "version": VERSION,
        "name": net.name,
        "input_shape": [s.height, s.width, s.channels],
        "n_classes": net.n_classes,
        "layers": layers,
    }
    payload = np.concatenate(blocks) if blocks else np.zeros(0, dtype="<f4")
    return header, payload


def save_network(net: Network, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        header, _ = _header(net, inline=True)
        path.write_text(json.dumps(header, sort_keys=True) + "\n")
        return
    header, payload = _header(net, inline=False)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(raw)))
        fh.write(raw)
        fh.write(payload.astype("<f4").tobytes())


def _block(ref, payload, where):
    try:
        shape = tuple(int(n) for n in ref["shape"])
        size = int(np.prod(shape)) if shape else 1
        if "data" in ref:
            flat = np.asarray(ref["data"], dtype="<f4")
        else:
            off = int(ref["offset"])
            if payload is None or off < 0 or off + size > payload.size:
                raise NetworkFormatError(f"{where}: weight block runs past the payload")
            flat = payload[off:off + size]
        if flat.size != size:
            raise NetworkFormatError(f"{where}: weight block has {flat.size} values, shape needs {size}")
        return flat.reshape(shape).astype(np.float64)
    except (KeyError, TypeError) as exc:
        raise NetworkFormatError(f"{where}: malformed weight reference ({exc})") from None


def _from_header(header: dict, payload) -> Network:
    if header.get("version") != VERSION:
        raise NetworkFormatError(f"unsupported network version {header.get('version')!r}")
    try:
        layers = []
        for i, entry in enumerate(header["layers"]):
            where = f"layer {i}"
            w = _block(entry["weights"], payload, where) if "weights" in entry else None
            b = _block(entry["bias"], payload, where) if "bias" in entry else None
            layers.append(LayerSpec(
                kind=entry["kind"],
                in_channels=int(entry.get("in_channels", 0)),
                out_channels=int(entry.get("out_channels", 0)),
                kernel=int(entry.get("kernel", 1)),
                stride=int(entry.get("stride", 1)),
                activation=entry.get("activation", "none"),
                weights=w,
                bias=b,
            ))
        h, w_, c = header["input_shape"]
        return Network(tuple(layers), TensorShape(int(h), int(w_), int(c)),
                       int(header["n_classes"]), header.get("name", "net"))
    except KeyError as exc:
        raise NetworkFormatError(f"network header is missing {exc.args[0]!r}") from None
    except ShapeError as exc:
        raise NetworkFormatError(str(exc)) from None


def load_network(path) -> Network:
    path = Path(path)
    if path.suffix == ".json":
        try:
            header = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"{path}: invalid JSON ({exc})") from None
        return _from_header(header, None)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise NetworkFormatError(f"{path}: not a network file")
    version, n = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise NetworkFormatError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(data[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise NetworkFormatError(f"{path}: corrupt header ({exc})") from None
    body = data[12 + n:]
    if len(body) % 4:
        raise NetworkFormatError(f"{path}: payload is not a whole number of float32 values")
    payload = np.frombuffer(body, dtype="<f4")
    return _from_header(header, payload)
