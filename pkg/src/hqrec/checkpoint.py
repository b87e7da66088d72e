"""Binary checkpoint format.

Layout: 8-byte magic, u32 header length, UTF-8 JSON header, raw payload.
The header carries the format version, the config snapshot, numeric
normalization stats, an array manifest (name, shape, dtype, offset), and a
sha256 checksum of the payload. Model parameters are little-endian float32
(float64 for fp64 test-tier models); numeric-encoder weights ride along at
their native float64. Save-then-load is bit-identical; version, checksum,
and config mismatches refuse to load.
"""

import hashlib
import json

import numpy as np

from .errors import CheckpointError

MAGIC = b"HQRECKPT"
VERSION = 1

_COMPAT_KEYS = (
    "d", "k_item", "k_user", "n_layers", "n_heads", "ffn_mult",
    "n_reader_layers", "schema_mode", "fusion_mode", "user_mode",
    "reader_mode", "dtype",
)


def _dtype_tag(arr):
    return arr.dtype.newbyteorder("<").str


def save_checkpoint(path, model, optimizer_moments=None, extra_meta=None):
    """Write model params, numeric-encoder state, and optional moments."""
    arrays = []
    blobs = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        data = np.ascontiguousarray(arr)
        if data.dtype.byteorder == ">":
            data = data.astype(data.dtype.newbyteorder("<"))
        raw = data.tobytes()
        arrays.append({
            "name": name, "shape": list(data.shape),
            "dtype": _dtype_tag(data), "offset": offset, "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)

    for name, tensor in model.params.items():
        push(f"param.{name}", tensor.data)
    for name, arr in model.numeric.arrays().items():
        push(f"numeric.{name}", arr)
    if optimizer_moments:
        for name, (m, v) in sorted(optimizer_moments.items()):
            push(f"opt.m.{name}", m)
            push(f"opt.v.{name}", v)

    payload = b"".join(blobs)
    header = {
        "version": VERSION,
        "model_config": model.cfg.to_dict(),
        "schema_hash": model.registry.schema_hash(),
        "numeric": model.numeric.to_dict(),
        "embedder": {
            "seed": model.embedders.seed,
            "native_width": model.embedders.native_width,
        },
        "arrays": arrays,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    if extra_meta:
        header["meta"] = extra_meta
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header_bytes).to_bytes(4, "little"))
        f.write(header_bytes)
        f.write(payload)


def read_checkpoint(path):
    """Parse and verify a checkpoint; returns (header, {name: array})."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {e}") from e
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path!r} is not a checkpoint file")
    header_len = int.from_bytes(raw[8:12], "little")
    if len(raw) < 12 + header_len:
        raise CheckpointError(f"{path!r}: truncated header")
    try:
        header = json.loads(raw[12:12 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path!r}: corrupt header: {e}") from e
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path!r}: format version {header.get('version')} != {VERSION}"
        )
    payload = raw[12 + header_len:]
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise CheckpointError(f"{path!r}: payload checksum mismatch")
    arrays = {}
    for spec in header["arrays"]:
        lo, hi = spec["offset"], spec["offset"] + spec["nbytes"]
        arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(spec["dtype"]))
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
    return header, arrays


def check_config_compatible(header, model_config_dict):
    """Raise naming each mismatched key, e.g. loading d=64 into d=32."""
    saved = header["model_config"]
    mismatched = [
        k for k in _COMPAT_KEYS if saved.get(k) != model_config_dict.get(k)
    ]
    if mismatched:
        detail = ", ".join(
            f"{k}: checkpoint={saved.get(k)!r} config={model_config_dict.get(k)!r}"
            for k in mismatched
        )
        raise CheckpointError(f"checkpoint/config mismatch on {detail}")


def restore_model(header, arrays, model):
    """Load parameter arrays into an already-constructed model."""
    check_config_compatible(header, model.cfg.to_dict())
    if header["schema_hash"] != model.registry.schema_hash():
        raise CheckpointError(
            f"checkpoint/config mismatch on schema_hash: "
            f"checkpoint={header['schema_hash']!r} "
            f"config={model.registry.schema_hash()!r}"
        )
    for name, tensor in model.params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        arr = arrays[key].astype(tensor.data.dtype, copy=False)
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"parameter {name!r} shape {arr.shape} != model {tensor.data.shape}"
            )
        tensor.data = np.ascontiguousarray(arr)
    from .numeric import NumericEncoderState

    model.numeric.__dict__.update(
        NumericEncoderState.from_dict(
            header["numeric"],
            {n[len("numeric."):]: a for n, a in arrays.items()
             if n.startswith("numeric.")},
        ).__dict__
    )
    model.fusion._item_cache.clear()
    model.fusion._name_cache.clear()
    model._ctx_cache.clear()
    model._slot_cache.clear()


def parameter_digest(model):
    """sha256 over all parameter bytes, for round-trip assertions."""
    h = hashlib.sha256()
    for name in model.params:
        h.update(name.encode())
        h.update(model.params[name].data.tobytes())
    for name, arr in sorted(model.numeric.arrays().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
