"""Deterministic checkpoint archive.

A checkpoint is a zip (stored, fixed timestamps, sorted member order)
holding header.json plus one raw little-endian float64 payload per
parameter. Identical parameter values always produce identical bytes,
which is what the freeze-schedule audits compare.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Checkpoint:
    stage: str
    config: dict
    params: dict          # name -> np.ndarray
    frozen: dict          # name -> bool
    extra: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def save_checkpoint(path, params, config: dict, stage: str, extra: dict | None = None) -> None:
    """params: iterable of Parameter objects (name, tensor, frozen)."""
    params = list(params)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise CheckpointError(f"duplicate parameter names: {', '.join(dupes)}")
    header = {
        "format": FORMAT_VERSION,
        "stage": stage,
        "config": config,
        "config_hash": config_hash(config),
        "extra": extra or {},
        "params": [
            {"name": p.name, "shape": list(p.tensor.data.shape), "frozen": bool(p.frozen)}
            for p in sorted(params, key=lambda p: p.name)
        ],
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as z:
        info = zipfile.ZipInfo("header.json", date_time=_EPOCH)
        z.writestr(info, json.dumps(header, sort_keys=True, indent=1))
        for p in sorted(params, key=lambda p: p.name):
            info = zipfile.ZipInfo(f"params/{p.name}.bin", date_time=_EPOCH)
            z.writestr(info, p.tensor.data.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    try:
        z = zipfile.ZipFile(path, "r")
    except (zipfile.BadZipFile, FileNotFoundError) as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from None
    with z:
        try:
            header = json.loads(z.read("header.json"))
        except KeyError:
            raise CheckpointError(f"{path} has no header.json") from None
        if header.get("format") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
        params = {}
        frozen = {}
        for meta in header["params"]:
            name = meta["name"]
            raw = z.read(f"params/{name}.bin")
            arr = np.frombuffer(raw, dtype="<f8").reshape(meta["shape"]).copy()
            params[name] = arr
            frozen[name] = bool(meta["frozen"])
    return Checkpoint(stage=header["stage"], config=header["config"],
                      params=params, frozen=frozen, extra=header.get("extra", {}))


def read_param_bytes(path) -> dict:
    """name -> raw payload bytes, for byte-level freeze comparisons."""
    with zipfile.ZipFile(path, "r") as z:
        header = json.loads(z.read("header.json"))
        return {m["name"]: z.read(f"params/{m['name']}.bin") for m in header["params"]}
