"""Model checkpoints: in-memory form plus a JSON manifest + raw little-endian payload on disk.

On disk a checkpoint at ``path`` is two files: ``path`` (the JSON manifest) and
``path + ".bin"`` (the payload). Payload order is trainable parameters, then
masks (uint8), then fixed matrices, all in declared layer order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import MLP, ModelConfig, build_model, payload_hash

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpoints(ValueError):
    """Two checkpoints do not share architecture or asymmetry payload."""


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    payload: list[tuple[str, np.ndarray]] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def asym_hash(self) -> str:
        return payload_hash(self.payload)

    @classmethod
    def from_model(cls, model: MLP, provenance: dict | None = None) -> "ModelCheckpoint":
        payload = [(name, arr.copy()) for name, arr in model.asym_payload()]
        return cls(ModelConfig.from_dict(model.config.to_dict()), model.state(), payload,
                   dict(provenance or {}))

    def to_model(self) -> MLP:
        model = build_model(ModelConfig.from_dict(self.config.to_dict()), dict(self.payload) or None)
        model.load_state(self.params)
        return model

    def with_params(self, params: dict[str, np.ndarray], **provenance) -> "ModelCheckpoint":
        prov = dict(self.provenance)
        prov.update(provenance)
        return ModelCheckpoint(self.config, {k: np.array(v, dtype=np.float64) for k, v in params.items()},
                               self.payload, prov)

    def trainable_masks(self) -> dict[str, np.ndarray | None]:
        masks: dict[str, np.ndarray | None] = {name: None for name in self.params}
        for name, arr in self.payload:
            if name.endswith(".mask"):
                masks[name[: -len(".mask")] + ".weight"] = arr.astype(bool)
        return masks

    def trainable_vector(self) -> np.ndarray:
        """Concatenation of every trainable entry (masked-out weight slots excluded)."""
        masks = self.trainable_masks()
        parts = []
        for name, arr in self.params.items():
            m = masks[name]
            parts.append(arr.ravel() if m is None else arr[m])
        return np.concatenate(parts)

    @property
    def n_trainable(self) -> int:
        masks = self.trainable_masks()
        return int(sum(a.size if masks[n] is None else masks[n].sum() for n, a in self.params.items()))

    def architecture(self) -> dict:
        d = self.config.to_dict()
        d.pop("init_seed")
        return d


def check_compatible(a: ModelCheckpoint, b: ModelCheckpoint) -> None:
    if a.asym_hash != b.asym_hash:
        raise IncompatibleCheckpoints(
            f"asymmetry payload hashes differ: {a.asym_hash[:16]}... vs {b.asym_hash[:16]}...")
    if a.architecture() != b.architecture():
        raise IncompatibleCheckpoints("checkpoints have different architectures")
    for name in a.params:
        if name not in b.params or a.params[name].shape != b.params[name].shape:
            raise IncompatibleCheckpoints(f"parameter {name} differs in shape")


# ---------------------------------------------------------------- persistence

def _entries(ckpt: ModelCheckpoint):
    for name, arr in ckpt.params.items():
        yield "param", name, np.asarray(arr, dtype="<f8")
    masks = [(n, a) for n, a in ckpt.payload if n.endswith(".mask")]
    rest = [(n, a) for n, a in ckpt.payload if not n.endswith(".mask")]
    for name, arr in masks:
        yield "mask", name, np.asarray(arr, dtype=np.uint8)
    for name, arr in rest:
        yield "fixed", name, np.asarray(arr, dtype="<f8")


def save_checkpoint(ckpt: ModelCheckpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    table = []
    for kind, name, arr in _entries(ckpt):
        raw = np.ascontiguousarray(arr).tobytes()
        table.append({"kind": kind, "name": name, "dtype": "u1" if kind == "mask" else "<f8",
                      "shape": list(arr.shape), "offset": len(blob), "nbytes": len(raw)})
        blob += raw
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "asym_seed": ckpt.config.asym_seed,
        "init_seed": ckpt.config.init_seed,
        "n_trainable": ckpt.n_trainable,
        "asym_hash": ckpt.asym_hash,
        "payload_file": path.name + ".bin",
        "payload_sha256": hashlib.sha256(blob).hexdigest(),
        "entries": table,
        "provenance": ckpt.provenance,
    }
    path.with_name(path.name + ".bin").write_bytes(bytes(blob))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read manifest {path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {manifest.get('format_version')}")
    blob = path.with_name(manifest["payload_file"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")
    params: dict[str, np.ndarray] = {}
    payload: list[tuple[str, np.ndarray]] = []
    masks, fixed = [], []
    for e in manifest["entries"]:
        n_items = int(np.prod(e["shape"])) if e["shape"] else 1
        itemsize = 1 if e["dtype"] == "u1" else 8
        if e["nbytes"] != n_items * itemsize or e["offset"] + e["nbytes"] > len(blob):
            raise CheckpointError(f"entry {e['name']}: length does not match shape")
        arr = np.frombuffer(blob, dtype=e["dtype"], count=n_items, offset=e["offset"]).reshape(e["shape"])
        arr = arr.astype(np.uint8 if e["dtype"] == "u1" else np.float64)
        if e["kind"] == "param":
            params[e["name"]] = arr
        elif e["kind"] == "mask":
            masks.append((e["name"], arr))
        else:
            fixed.append((e["name"], arr))
    # restore declared payload order: per layer mask then fixed, then FiGLU matrices
    fixed_by_name = dict(fixed)
    for name, m in masks:
        stem = name[: -len(".mask")]
        payload.append((name, m))
        payload.append((stem + ".fixed", fixed_by_name.pop(stem + ".fixed")))
    payload.extend((n, a) for n, a in fixed if n in fixed_by_name)
    ckpt = ModelCheckpoint(ModelConfig.from_dict(manifest["config"]), params, payload,
                           manifest.get("provenance", {}))
    if ckpt.asym_hash != manifest["asym_hash"]:
        raise CheckpointError("asym_hash recomputed on load does not match manifest")
    if ckpt.n_trainable != manifest["n_trainable"]:
        raise CheckpointError("trainable-parameter count does not match payload")
    return ckpt
