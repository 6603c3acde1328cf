"""Checkpoints: a JSON manifest plus one little-endian f32 blob per parameter group."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, IoFailure, MissingFile
from .nukesformer import GROUPS, Generator, ModelConfig, NukesFormer

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT = "nukes-ckpt-1"


def _config_to_dict(cfg: ModelConfig) -> dict:
    d = dict(vars(cfg))
    d["stage_blocks"] = list(cfg.stage_blocks)
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["stage_blocks"] = tuple(d.get("stage_blocks", ModelConfig.stage_blocks))
    try:
        return ModelConfig(**d)
    except TypeError as e:
        raise CorruptCheckpoint(f"bad model config in manifest: {e}") from e


def save_checkpoint(model: NukesFormer, directory, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` and ``<group>.f32`` for every group; returns the directory."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
        groups = model.groups()
        entries = {}
        for g in GROUPS:
            params, offset = [], 0
            blobs = []
            for name, t in groups[g].items():
                arr = np.ascontiguousarray(t.data, dtype="<f4")
                params.append({"name": name, "shape": list(arr.shape), "offset": offset})
                offset += arr.size
                blobs.append(arr.tobytes())
            fname = f"{g}.f32"
            (out / fname).write_bytes(b"".join(blobs))
            entries[g] = {"file": fname, "count": offset, "params": params}
        manifest = {"format": FORMAT, "model_config": _config_to_dict(model.cfg), "groups": entries}
        if extra:
            manifest["extra"] = extra
        (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint to {out}: {e}") from e
    return out


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise MissingFile(f"no checkpoint manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"unreadable manifest {path}: {e}") from e
    if manifest.get("format") != FORMAT or "groups" not in manifest:
        raise CorruptCheckpoint(f"{path} is not a {FORMAT} manifest")
    return manifest


def _read_group(directory: Path, entry: dict, touched: list) -> dict[str, np.ndarray]:
    path = directory / entry["file"]
    if not path.is_file():
        raise MissingFile(f"missing checkpoint blob {path}")
    raw = path.read_bytes()
    touched.append(str(path))
    if len(raw) != 4 * entry["count"]:
        raise CorruptCheckpoint(f"{path}: expected {4 * entry['count']} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4")
    out = {}
    for p in entry["params"]:
        n = int(np.prod(p["shape"])) if p["shape"] else 1
        out[p["name"]] = flat[p["offset"]:p["offset"] + n].astype(np.float64).reshape(p["shape"])
    return out


def _assign(target: dict, values: dict, group: str):
    if set(target) != set(values):
        missing = sorted(set(target) ^ set(values))[:3]
        raise CorruptCheckpoint(f"group {group}: parameter names do not match the model ({missing} ...)")
    for name, t in target.items():
        v = values[name]
        if v.shape != t.shape:
            raise CorruptCheckpoint(f"{group}/{name}: shape {v.shape} vs model {t.shape}")
        t.data = v.astype(t.dtype)


def load_checkpoint(directory, dtype=np.float64) -> tuple[NukesFormer, list[str]]:
    """Rebuild the full model; returns it with the list of files read."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    touched = [str(directory / MANIFEST)]
    cfg = model_config_from_dict(manifest["model_config"])
    model = NukesFormer(cfg, np.random.default_rng(0), dtype)
    groups = model.groups()
    for g in GROUPS:
        if g not in manifest["groups"]:
            raise CorruptCheckpoint(f"manifest lacks group {g}")
        _assign(groups[g], _read_group(directory, manifest["groups"][g], touched), g)
    return model, touched


def load_inference_generator(directory, dtype=np.float64) -> tuple[Generator, list[str]]:
    """Load only the RGB-to-HSI generator's inference parameters."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    touched = [str(directory / MANIFEST)]
    cfg = model_config_from_dict(manifest["model_config"])
    gen = Generator(cfg.generator("rh"), np.random.default_rng(0), dtype)
    if "g_rh" not in manifest["groups"]:
        raise CorruptCheckpoint("manifest lacks group g_rh")
    _assign(gen.inference_parameters(), _read_group(directory, manifest["groups"]["g_rh"], touched), "g_rh")
    for path in touched:
        log.info("infer read %s", path)
    return gen, touched
