"""Deterministic model checkpoints.

A checkpoint is a single zip archive with a fixed member order and zeroed
timestamps, so saving the same model twice produces byte-identical files:

    meta.json            format version, width, head sizes, step counter, seed
    params/<name>.npy    one float32 array per named parameter

Parameter names follow the module tree and are stable across runs, which
makes checkpoints diffable.
"""

from __future__ import annotations

import io
import json
import os
import zipfile

import numpy as np
import torch

from .models import MDLModel, WidthConfig, build_model

FORMAT_VERSION = 1

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


def _write_member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(model: MDLModel, path: str | os.PathLike) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "width": {"multiplier": model.width.multiplier, "norm_k": model.width.norm_k},
        "head_sizes": {str(t): int(n) for t, n in sorted(model.head_sizes.items())},
        "train_steps": int(model.train_steps),
        "trial_seed": int(model.trial_seed),
        "params": [name for name, _ in model.named_parameters()],
    }
    tmp = f"{os.fspath(path)}.tmp"
    with zipfile.ZipFile(tmp, "w") as zf:
        _write_member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name, p in model.named_parameters():
            buf = io.BytesIO()
            np.save(buf, p.detach().cpu().numpy().astype(np.float32, copy=False))
            _write_member(zf, f"params/{name}.npy", buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> MDLModel:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint format {meta.get('format_version')!r}"
            )
        width = WidthConfig(**meta["width"])
        head_sizes = {int(t): int(n) for t, n in meta["head_sizes"].items()}
        model = build_model(width, head_sizes, seed=int(meta["trial_seed"]))
        with torch.no_grad():
            for name, p in model.named_parameters():
                arr = np.load(io.BytesIO(zf.read(f"params/{name}.npy")))
                if tuple(arr.shape) != tuple(p.shape):
                    raise CheckpointError(
                        f"{path}: shape mismatch for {name}: "
                        f"{tuple(arr.shape)} vs {tuple(p.shape)}"
                    )
                p.copy_(torch.from_numpy(arr))
        model.train_steps = int(meta["train_steps"])
        model.trial_seed = int(meta["trial_seed"])
    return model
