"""Binary container for named float64 arrays.

Layout (all integers little-endian)::

    8 bytes   magic b"ASAMCKPT"
    8 bytes   uint64 header length L
    L bytes   UTF-8 JSON header (sorted keys, no whitespace)
    32 bytes  SHA-256 of the header bytes
    payload   concatenated little-endian float64 arrays

The header holds ``format_version``, ``entries`` (name, shape, offset,
nbytes; offsets ascending and contiguous from 0), ``payload_sha256`` and a
free-form ``meta`` object.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"ASAMCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(arrays: "OrderedDict[str, np.ndarray]", meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "entries": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + hashlib.sha256(hbytes).digest() + payload


def decode(blob: bytes) -> tuple["OrderedDict[str, np.ndarray]", dict, dict]:
    """Returns (arrays, meta, header)."""
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    hbytes = blob[16 : 16 + hlen]
    digest = blob[16 + hlen : 48 + hlen]
    if hashlib.sha256(hbytes).digest() != digest:
        raise CheckpointError("header digest mismatch")
    header = json.loads(hbytes)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header.get('format_version')}")
    payload = blob[48 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload digest mismatch")
    arrays = OrderedDict()
    expected = 0
    for e in header["entries"]:
        if e["offset"] != expected:
            raise CheckpointError(f"entry {e['name']} offset {e['offset']} is not contiguous")
        n = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        if e["nbytes"] != 8 * n:
            raise CheckpointError(f"entry {e['name']} size does not match its shape")
        buf = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(e["shape"]).astype(np.float64)
        expected += e["nbytes"]
    if expected != len(payload):
        raise CheckpointError("payload length does not match entries")
    return arrays, header["meta"], header


def save(path: str | Path, arrays, meta: dict | None = None) -> str:
    """Write the container; returns the payload SHA-256."""
    blob = encode(arrays, meta)
    Path(path).write_bytes(blob)
    return payload_digest(blob)


def load(path: str | Path):
    return decode(Path(path).read_bytes())[:2]


def payload_digest(blob: bytes) -> str:
    (hlen,) = struct.unpack("<Q", blob[8:16])
    return json.loads(blob[16 : 16 + hlen])["payload_sha256"]


# -- model and bank helpers ---------------------------------------------------------

def model_arrays(model, with_optimizer: bool = True) -> "OrderedDict[str, np.ndarray]":
    arrays = OrderedDict()
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.data
    if with_optimizer:
        for name, p in model.named_parameters():
            arrays[f"adam_m/{name}"] = p.first_moment
            arrays[f"adam_v/{name}"] = p.second_moment
    return arrays


def save_model(path, model, extra_meta: dict | None = None) -> str:
    meta = {
        "kind": "model",
        "config": model.cfg.to_dict(),
        "step_counts": {n: p.step_count for n, p in model.named_parameters()},
    }
    meta.update(extra_meta or {})
    return save(path, model_arrays(model), meta)


def load_model(path):
    from .config import Config
    from .decoder import Detector

    arrays, meta = load(path)
    if meta.get("kind") != "model":
        raise CheckpointError(f"{path} is not a model checkpoint")
    model = Detector(Config(**meta["config"]))
    params = dict(model.named_parameters())
    state = {n[len("param/") :]: a for n, a in arrays.items() if n.startswith("param/")}
    model.load_state_dict(state)
    for n, p in params.items():
        if f"adam_m/{n}" in arrays:
            p.first_moment = arrays[f"adam_m/{n}"].copy()
            p.second_moment = arrays[f"adam_v/{n}"].copy()
        p.step_count = int(meta.get("step_counts", {}).get(n, 0))
    return model, meta


def save_bank(path, bank, extra_meta: dict | None = None) -> str:
    arrays = OrderedDict()
    for v in sorted(bank.videos):
        for c, rows in enumerate(bank.videos[v]):
            arrays[f"bank/v{v}/c{c}"] = rows
    meta = {"kind": "bank", "k": bank.k, "d": bank.d}
    meta.update(extra_meta or {})
    return save(path, arrays, meta)


def load_bank(path):
    from .longterm import QueryBank

    arrays, meta = load(path)
    if meta.get("kind") != "bank":
        raise CheckpointError(f"{path} is not a query bank")
    bank = QueryBank(k=int(meta["k"]), d=int(meta["d"]))
    per_video: dict[int, dict[int, np.ndarray]] = {}
    for name, arr in arrays.items():
        _, v, c = name.split("/")
        per_video.setdefault(int(v[1:]), {})[int(c[1:])] = arr
    for v, clips in sorted(per_video.items()):
        bank.add_video(v, [clips[c] for c in sorted(clips)])
    return bank, meta
