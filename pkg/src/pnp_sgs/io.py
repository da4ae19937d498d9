"""Tensor, image and chain-checkpoint files."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .sampler import Chain

NPY_VERSION = (1, 0)


def save_npy(path, arr, dtype="<f4"):
    """Write a v1.0 NPY file (little-endian, C-order)."""
    arr = np.ascontiguousarray(arr, dtype=np.dtype(dtype))
    with open(path, "wb") as f:
        np.lib.format.write_array(f, arr, version=NPY_VERSION, allow_pickle=False)


def load_npy(path) -> np.ndarray:
    return np.load(path, allow_pickle=False)


def read_image(path) -> np.ndarray:
    """Load a PNG/JPEG (scaled to [0, 1]) or an NPY array as a planar ``(C, H, W)`` image."""
    path = Path(path)
    if path.suffix == ".npy":
        x = load_npy(path).astype(np.float64)
    else:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            x = np.asarray(im, dtype=np.float64) / 255.0
        if x.ndim == 3:
            x = np.moveaxis(x, -1, 0)
    if x.ndim == 2:
        x = x[None]
    return x


def write_png(path, x):
    """8-bit PNG of a planar image, clamped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[0] if x.shape[0] == 1 else np.moveaxis(x, 0, -1)
    q = np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(q).save(path)


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_chain(chain: Chain, directory, manifest: dict | None = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_npy(d / "t_star_trace.npy", chain.t_star_trace, dtype="<i4")
    files = ["t_star_trace.npy"]
    if chain.thin:
        for key in ("mean_x", "mean_z", "var_x"):
            save_npy(d / f"{key}.npy", chain.stats[key])
            files.append(f"{key}.npy")
        save_npy(d / "reservoir.npy", chain.reservoir)
        files.append("reservoir.npy")
    else:
        save_npy(d / "x_samples.npy", chain.x_samples)
        save_npy(d / "z_samples.npy", chain.z_samples)
        files += ["x_samples.npy", "z_samples.npy"]
    meta = {
        "n_mc": chain.n_mc,
        "n_bi": chain.n_bi,
        "thin": chain.thin,
        "files": sorted(files),
        "config": chain.config,
    }
    if chain.thin:
        meta["n_post_burn_in"] = chain.stats["n"]
    meta.update(manifest or {})
    write_json(d / "manifest.json", meta)


def load_chain(directory) -> Chain:
    d = Path(directory)
    meta = json.loads((d / "manifest.json").read_text())
    trace = load_npy(d / "t_star_trace.npy").astype(np.int64)
    if meta["thin"]:
        stats = {k: load_npy(d / f"{k}.npy").astype(np.float64) for k in ("mean_x", "mean_z", "var_x")}
        stats["n"] = meta.get("n_post_burn_in", meta["n_mc"] - meta["n_bi"])
        return Chain(None, None, trace, meta["n_bi"], meta.get("config", {}), stats,
                     load_npy(d / "reservoir.npy").astype(np.float64))
    return Chain(load_npy(d / "x_samples.npy").astype(np.float64),
                 load_npy(d / "z_samples.npy").astype(np.float64),
                 trace, meta["n_bi"], meta.get("config", {}))
