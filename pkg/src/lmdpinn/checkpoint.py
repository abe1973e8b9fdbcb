"""Binary checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"LMDPINN\\x00"
    uint32    format version
    uint64    metadata length in bytes
    ...       metadata, UTF-8 JSON (configs, provenance, payload layout, sha256)
    ...       payload, float64 little-endian, arrays in layout order
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, fields

import numpy as np

from .network import MlpParams, NetworkConfig, ScaleSet
from .physics import ProcessSetup
from .sampling import SamplingPlan
from .training import CHECKPOINT_VERSION, AdamState, Checkpoint, LossWeights

MAGIC = b"LMDPINN\x00"
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def _tupled(cls, d: dict):
    """Rebuild a frozen dataclass from JSON, restoring tuple-typed fields."""
    kw = {}
    for f in fields(cls):
        if f.name in d:
            v = d[f.name]
            kw[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kw)


def _layout(ck: Checkpoint):
    """(name, array) pairs in payload order."""
    out = []
    for name, net in ck.nets():
        for i, (W, b) in enumerate(zip(net.weights, net.biases)):
            out.append((f"{name}.W{i}", W))
            out.append((f"{name}.b{i}", b))
    for name in sorted(ck.optimizers):
        st = ck.optimizers[name]
        out.append((f"adam.{name}.m", st.m))
        out.append((f"adam.{name}.v", st.v))
    return out


def to_bytes(ck: Checkpoint) -> bytes:
    layout = _layout(ck)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in layout)
    meta = {
        "setup": asdict(ck.setup),
        "scale": asdict(ck.scale),
        "plan": asdict(ck.plan),
        "weights": asdict(ck.weights),
        "nets": {name: asdict(net.config) for name, net in ck.nets()},
        "optimizers": {k: {"step": s.step, "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}
                       for k, s in sorted(ck.optimizers.items())},
        "provenance": list(ck.provenance),
        "created": ck.created,
        "notes": ck.notes,
        "id": ck.id,
        "layout": [[name, list(np.shape(a))] for name, a in layout],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    mb = json.dumps(meta, sort_keys=True).encode("utf-8")
    return _HEADER.pack(MAGIC, ck.version, len(mb)) + mb + payload


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header (truncated?)")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})")
    end = _HEADER.size + mlen
    if len(blob) < end:
        raise CheckpointError("truncated metadata block")
    try:
        meta = json.loads(blob[_HEADER.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from None
    payload = blob[end:]
    if len(payload) != meta["payload_bytes"]:
        raise CheckpointError(f"payload has {len(payload)} bytes, expected {meta['payload_bytes']} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != meta["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")
    arrays, k = {}, 0
    for name, shape in meta["layout"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=n, offset=k * 8).astype(np.float64).reshape(shape)
        k += n
    nets = {}
    for name, cfg in meta["nets"].items():
        config = _tupled(NetworkConfig, cfg)
        L = len(config.sizes) - 1
        nets[name] = MlpParams(config, [arrays[f"{name}.W{i}"] for i in range(L)], [arrays[f"{name}.b{i}"] for i in range(L)])
    opts = {k: AdamState(arrays[f"adam.{k}.m"], arrays[f"adam.{k}.v"], o["step"], o["lr"], o["beta1"], o["beta2"], o["eps"])
            for k, o in meta["optimizers"].items()}
    ck = Checkpoint(
        setup=_tupled(ProcessSetup, meta["setup"]),
        scale=_tupled(ScaleSet, meta["scale"]),
        plan=_tupled(SamplingPlan, meta["plan"]),
        weights=_tupled(LossWeights, meta["weights"]),
        temperature=nets.get("temperature"),
        stress=nets.get("stress"),
        optimizers=opts,
        provenance=list(meta["provenance"]),
        created=meta["created"],
        notes=meta["notes"],
        version=version,
    )
    if ck.id != meta["id"]:
        raise CheckpointError("checkpoint id does not match its contents")
    return ck


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    blob = to_bytes(ck)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
