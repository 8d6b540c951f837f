"""Versioned binary container for frozen models.

Layout: 8-byte magic, little-endian uint32 format version, little-endian
uint64 header length, a UTF-8 JSON header (sorted keys), then every array
listed in the header as little-endian float64 in header order. Nothing in
the file depends on wall-clock time, so equal models give equal bytes.
"""
from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .residence import EccdfTable
from .state import Hyperparams, Model

__all__ = ["MAGIC", "VERSION", "ModelFileError", "dumps", "loads", "save", "load", "to_json"]

MAGIC = b"TRIBEFLW"
VERSION = 1
_ARRAYS = ("pi", "phi", "env_weights", "user_counts", "zeta", "eccdf_values", "eccdf_offsets")


class ModelFileError(ValueError):
    """Malformed or incompatible model file."""


def _arrays(model: Model) -> dict:
    return {
        "pi": model.pi,
        "phi": model.phi,
        "env_weights": model.env_weights,
        "user_counts": model.user_counts,
        "zeta": np.asarray(model.hyper.zeta),
        "eccdf_values": model.eccdf.values,
        "eccdf_offsets": model.eccdf.offsets,
    }


def _header(model: Model, arrays: dict) -> dict:
    h = model.hyper
    return {
        "format_version": VERSION,
        "K": model.K,
        "n_items": model.n_items,
        "n_users": model.n_users,
        "B": h.B,
        "K_init": h.K_init,
        "alpha": h.alpha,
        "beta": h.beta,
        "nt_mode": bool(model.nt_mode),
        "user_ids": list(model.user_ids) if model.user_ids is not None else None,
        "item_ids": list(model.item_ids) if model.item_ids is not None else None,
        "arrays": [[name, list(np.shape(arrays[name]))] for name in _ARRAYS],
    }


def dumps(model: Model) -> bytes:
    arrays = _arrays(model)
    header = json.dumps(_header(model, arrays), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(header)), header]
    for name in _ARRAYS:
        parts.append(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return b"".join(parts)


def loads(data: bytes) -> Model:
    if len(data) < 20 or data[:8] != MAGIC:
        raise ModelFileError("not a model file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise ModelFileError(f"unsupported model format version {version}")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupt header: {exc}") from None
    pos = 20 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        end = pos + 8 * n
        if end > len(data):
            raise ModelFileError("truncated model file")
        arrays[name] = np.frombuffer(data[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    if pos != len(data):
        raise ModelFileError("trailing bytes after arrays")

    K, I, U = header["K"], header["n_items"], header["n_users"]
    if arrays["pi"].shape != (K, U) or arrays["phi"].shape != (I, K) \
            or arrays["env_weights"].shape != (K,) or arrays["user_counts"].shape != (U,) \
            or arrays["eccdf_offsets"].shape != (K + 1,):
        raise ModelFileError("array shapes disagree with K, n_items, n_users")
    hyper = Hyperparams(header["alpha"], header["beta"], arrays["zeta"], header["B"],
                        header["K_init"])
    eccdf = EccdfTable(arrays["eccdf_values"], arrays["eccdf_offsets"].astype(np.int64))
    user_ids = tuple(header["user_ids"]) if header["user_ids"] is not None else None
    item_ids = tuple(header["item_ids"]) if header["item_ids"] is not None else None
    return Model(arrays["pi"], arrays["phi"], arrays["env_weights"],
                 arrays["user_counts"].astype(np.int64), eccdf, hyper, user_ids, item_ids,
                 bool(header["nt_mode"]))


def save(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path) -> Model:
    with open(path, "rb") as fh:
        return loads(fh.read())


def to_json(model: Model, fh) -> None:
    """Readable dump of the header and arrays (debugging aid)."""
    arrays = _arrays(model)
    doc = _header(model, arrays)
    doc["data"] = {k: np.asarray(v, dtype=np.float64).tolist() for k, v in arrays.items()}
    json.dump(doc, fh, sort_keys=True, indent=1)
    fh.write("\n")
