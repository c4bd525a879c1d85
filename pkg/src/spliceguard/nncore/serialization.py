"""Checkpoint files: a JSON header followed by raw little-endian float32 arrays.

Layout::

    b"SGCK" | u32 header length | header JSON (utf-8) | payload

The header lists ``params`` as ``[name, shape]`` pairs in payload order.  When
``optimizer_state`` is true the payload continues with every first moment and
then every second moment, in the same order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import FormatError
from .optim import OptimizerState

MAGIC = b"SGCK"
VERSION = 1


def encode_checkpoint(params: dict, step: int = 0, optimizer: OptimizerState | None = None, meta=None) -> bytes:
    names = list(params)
    header = {
        "version": VERSION,
        "params": [[n, list(np.shape(params[n]))] for n in names],
        "optimizer_state": optimizer is not None,
        "step": int(step),
        "meta": meta or {},
    }
    if optimizer is not None:
        header["optimizer_step"] = int(optimizer.step)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = [params[n] for n in names]
    if optimizer is not None:
        arrays += [optimizer.m.get(n, np.zeros(np.shape(params[n]))) for n in names]
        arrays += [optimizer.v.get(n, np.zeros(np.shape(params[n]))) for n in names]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def decode_checkpoint(blob: bytes, origin="checkpoint"):
    """Inverse of ``encode_checkpoint``: returns ``(params, header, optimizer)``."""
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"{origin}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", blob, 4)
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{origin}: corrupt header") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{origin}: unsupported checkpoint version {header.get('version')}")
    manifest = [(n, tuple(shape)) for n, shape in header["params"]]
    copies = 3 if header["optimizer_state"] else 1
    sizes = [int(np.prod(s)) for _, s in manifest]
    expected = 4 * sum(sizes) * copies
    payload = blob[8 + hlen:]
    if len(payload) != expected:
        raise FormatError(f"{origin}: payload is {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    offsets = np.concatenate([[0], np.cumsum(sizes * copies)])
    arrays = [flat[offsets[k]:offsets[k + 1]] for k in range(len(sizes) * copies)]
    n = len(manifest)
    params = {name: arrays[k].reshape(shape) for k, (name, shape) in enumerate(manifest)}
    optimizer = None
    if header["optimizer_state"]:
        optimizer = OptimizerState(
            m={name: arrays[n + k].reshape(s) for k, (name, s) in enumerate(manifest)},
            v={name: arrays[2 * n + k].reshape(s) for k, (name, s) in enumerate(manifest)},
            step=int(header.get("optimizer_step", header["step"])),
        )
    return params, header, optimizer


def save_checkpoint(path, params: dict, step: int = 0, optimizer=None, meta=None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params, step, optimizer, meta))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), origin=str(path))
