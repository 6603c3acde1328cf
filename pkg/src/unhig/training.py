"""Toy unpaired training on synthetic scenes, validation on paired synthetic data,
and the ablation sweep."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .errors import ConfigInvalid, IoFailure
from .gradcore import AdamState, Tape, Tensor, adam_step, ops
from .hsicube import HsiCube, SceneSpec, build_srf, degrade, synth_scene
from .losses import (
    LossWeights,
    adversarial_loss,
    cycle_loss,
    dcpm_sample,
    geometric_contrastive,
    non_degraded_loss,
    project_codes,
    spectral_contrastive,
    total_loss,
)
from .metrics import evaluate, psnr
from .nukesformer import ModelConfig, NukesFormer, count_params, cycle_pass, generator_forward

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "L_cyc", "L_nde", "L_adv_g", "L_adv_d", "L_spec", "L_geo", "total")
VARIANTS = ("base", "no-nukes", "no-gmsa", "no-dcpm-g", "no-dcpm-s")


@dataclass(frozen=True)
class TrainConfig:
    n_hsi: int = 8
    n_rgb: int = 8
    n_val: int = 4
    size: int = 32
    bands: int = 31
    base_channels: int = 8
    stage_blocks: tuple = (1, 1, 2, 1, 1)
    use_gabor: bool = True
    uniform_kan: bool = False
    gabor_alt_form: bool = False
    disc_width: int = 8
    head_width: int = 64
    w_cyc: float = 1.0
    w_nde: float = 0.5
    w_adv: float = 1.0
    w_spec: float = 0.25
    w_geo: float = 0.25
    n_patches: int = 64
    n_negatives: int = 15
    tau: float = 0.07
    tau_s: float = 0.5
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    horizon: int = 0  # 0 means "same as steps"
    steps: int = 500
    seed: int = 0
    dtype: str = "f64"
    n_endmembers: int = 4
    smoothness: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "stage_blocks", tuple(int(n) for n in self.stage_blocks))
        if self.steps < 1:
            raise ConfigInvalid("steps must be >= 1")
        n_down = len(self.stage_blocks) // 2
        if len(self.stage_blocks) % 2 == 0 or n_down < 1:
            raise ConfigInvalid("stage_blocks needs an odd length of at least 3")
        if self.size < 1 or self.size % (2 ** n_down):
            raise ConfigInvalid(f"image size {self.size} must be divisible by {2 ** n_down}")
        if min(self.n_hsi, self.n_rgb, self.n_val) < 1:
            raise ConfigInvalid("scene counts must be positive")
        if self.dtype not in ("f32", "f64"):
            raise ConfigInvalid("dtype must be 'f32' or 'f64'")
        if self.n_patches > self.size * self.size:
            raise ConfigInvalid("n_patches exceeds the number of pixels")
        try:
            self.weights
        except Exception as e:  # InvalidParam from LossWeights
            raise ConfigInvalid(str(e)) from e

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_cyc, self.w_nde, self.w_adv, self.w_spec, self.w_geo)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def model_config(self) -> ModelConfig:
        return ModelConfig(bands=self.bands, base_channels=self.base_channels, stage_blocks=self.stage_blocks,
                           use_gabor=self.use_gabor, uniform_kan=self.uniform_kan,
                           gabor_alt_form=self.gabor_alt_form, disc_width=self.disc_width,
                           head_width=self.head_width)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_blocks"] = list(self.stage_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigInvalid(str(e)) from e

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigInvalid(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigInvalid("config file must hold a JSON object")
        return cls.from_dict(d)

    def variant(self, name: str) -> "TrainConfig":
        if name == "base":
            return self
        if name == "no-nukes":
            return dataclasses.replace(self, uniform_kan=True)
        if name == "no-gmsa":
            return dataclasses.replace(self, use_gabor=False)
        if name == "no-dcpm-g":
            return dataclasses.replace(self, w_geo=0.0)
        if name == "no-dcpm-s":
            return dataclasses.replace(self, w_spec=0.0)
        raise ConfigInvalid(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")


@dataclass
class RunManifest:
    config: dict
    input_hash: str
    loss_csv: str
    checkpoint: str
    psnr_init: float
    psnr_final: float
    final_metrics: dict
    params_train: int
    params_infer: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass
class Dataset:
    hsi: list  # unpaired HSI scenes (C, H, W) arrays
    rgb: list  # unpaired RGB images of *other* scenes
    val_hsi: list  # paired validation
    val_rgb: list


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent per-purpose generators derived from the master seed."""
    names = ("scene", "sampler", "init")
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def build_dataset(cfg: TrainConfig, rng: np.random.Generator) -> Dataset:
    srf = build_srf(bands=cfg.bands)
    total = cfg.n_hsi + cfg.n_rgb + cfg.n_val
    seeds = rng.integers(0, 2 ** 31 - 1, size=total)

    def scene(s) -> HsiCube:
        return synth_scene(SceneSpec(seed=int(s), n_endmembers=cfg.n_endmembers,
                                     spatial_smoothness=cfg.smoothness, bands=cfg.bands,
                                     width=cfg.size, height=cfg.size))

    cubes = [scene(s) for s in seeds]
    hsi = [c.data.astype(cfg.np_dtype) for c in cubes[:cfg.n_hsi]]
    # RGB training images come from scenes the HSI set never contains
    rgb = [degrade(c, srf).data.astype(cfg.np_dtype) for c in cubes[cfg.n_hsi:cfg.n_hsi + cfg.n_rgb]]
    val = cubes[cfg.n_hsi + cfg.n_rgb:]
    return Dataset(hsi, rgb, [c.data for c in val], [degrade(c, srf).data for c in val])


def validation_psnr(g_rh, data: Dataset, dtype=np.float64) -> float:
    vals = []
    for x, y in zip(data.val_hsi, data.val_rgb):
        out = generator_forward(g_rh, Tensor(y.astype(dtype))).data
        vals.append(psnr(x, out))
    return float(np.mean(vals))


def validation_report(g_rh, data: Dataset, dtype=np.float64):
    x = data.val_hsi[0]
    out = generator_forward(g_rh, Tensor(data.val_rgb[0].astype(dtype))).data
    return evaluate(x, out)


def _collect(params: dict) -> dict:
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    for p in params.values():
        p.grad = None
    return grads


def train_step(model: NukesFormer, cfg: TrainConfig, x: np.ndarray, y: np.ndarray, dcpm_seed: int,
               g_state: AdamState, d_state: AdamState) -> dict:
    """One generator update followed by one discriminator update on the same fakes."""
    gen_params, disc_params = model.generator_side(), model.discriminator_side()
    x, y = Tensor(x), Tensor(y)
    w = cfg.weights
    with Tape() as tape:
        outs, feats = cycle_pass(x, y, model.g_rh, model.g_hr, with_features=True)
        y_f, _, x_hat_f, _ = outs
        l_cyc = cycle_loss(x, y, outs)
        l_nde = non_degraded_loss(model.g_rh, model.g_hr, x, y)
        l_adv_g, _ = adversarial_loss(model.d_h, model.d_r, x, y, x_hat_f, y_f)
        rng = np.random.default_rng(dcpm_seed)
        # HSI-scene cycle: G_hr features vs G_rh reconstruction features; RGB-scene cycle mirrors it
        set1 = dcpm_sample(project_codes(model.f_a, feats["Y_f"]), project_codes(model.f_b, feats["X_r"]),
                           cfg.n_patches, cfg.n_negatives, rng, cfg.tau)
        set2 = dcpm_sample(project_codes(model.f_b, feats["X_hat_f"]), project_codes(model.f_a, feats["Y_hat_r"]),
                           cfg.n_patches, cfg.n_negatives, rng, cfg.tau)
        l_spec = ops.add(spectral_contrastive(set1, cfg.tau_s), spectral_contrastive(set2, cfg.tau_s))
        l_geo = ops.add(geometric_contrastive(set1), geometric_contrastive(set2))
        total = total_loss([l_cyc, l_nde, l_adv_g, l_spec, l_geo], w)
    tape.backward(total)
    g_grads = _collect(gen_params)
    _collect(disc_params)  # discriminator gradients from the generator pass are discarded
    adam_step(gen_params, g_grads, g_state)

    fake_x, fake_y = Tensor(x_hat_f.data), Tensor(y_f.data)
    with Tape() as tape:
        _, disc = adversarial_loss(model.d_h, model.d_r, x, y, fake_x, fake_y)
        d_obj = ops.neg(disc)  # the discriminator maximises the log-likelihood
    tape.backward(d_obj)
    adam_step(disc_params, _collect(disc_params), d_state)
    return {"L_cyc": l_cyc.item(), "L_nde": l_nde.item(), "L_adv_g": l_adv_g.item(),
            "L_adv_d": disc.item(), "L_spec": l_spec.item(), "L_geo": l_geo.item(), "total": total.item()}


def source_digest() -> str:
    """SHA-256 over the package's own source files, so cached runs go stale when code changes."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.rglob("*.py")):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def input_hash(cfg: TrainConfig) -> str:
    blob = json.dumps({"config": cfg.to_dict(), "version": __version__, "source": source_digest()},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def train(cfg: TrainConfig, out_dir, progress=None) -> RunManifest:
    """Train, write ``losses.csv``, ``ckpt/`` and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {out}: {e}") from e
    t0 = time.perf_counter()
    streams = rng_streams(cfg.seed)
    data = build_dataset(cfg, streams["scene"])
    model = NukesFormer(cfg.model_config(), streams["init"], cfg.np_dtype)
    sampler = streams["sampler"]
    horizon = cfg.horizon or cfg.steps
    g_state = AdamState(horizon, cfg.lr, cfg.beta1, cfg.beta2)
    d_state = AdamState(horizon, cfg.lr, cfg.beta1, cfg.beta2)
    psnr_init = validation_psnr(model.g_rh, data, cfg.np_dtype)

    csv_path = out / "losses.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for step in range(1, cfg.steps + 1):
            i = int(sampler.integers(len(data.hsi)))
            j = int(sampler.integers(len(data.rgb)))
            dcpm_seed = int(sampler.integers(2 ** 32))
            parts = train_step(model, cfg, data.hsi[i], data.rgb[j], dcpm_seed, g_state, d_state)
            writer.writerow([step] + [repr(float(parts[k])) for k in LOSS_COLUMNS[1:]])
            if progress is not None:
                progress(step, parts)
    ckpt = save_checkpoint(model, out / "ckpt", extra={"train_config": cfg.to_dict()})
    psnr_final = validation_psnr(model.g_rh, data, cfg.np_dtype)
    report = validation_report(model.g_rh, data, cfg.np_dtype)
    manifest = RunManifest(
        config=cfg.to_dict(), input_hash=input_hash(cfg), loss_csv=str(csv_path), checkpoint=str(ckpt),
        psnr_init=psnr_init, psnr_final=psnr_final, final_metrics=report.to_dict(),
        params_train=count_params(model, "train"), params_infer=count_params(model, "infer"),
        extra={"seconds": round(time.perf_counter() - t0, 2)})
    manifest.write(out / "manifest.json")
    return manifest


def read_losses(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in LOSS_COLUMNS}


ABLATION_COLUMNS = ("variant", "seed", "psnr_init", "psnr_final", "rmse", "mrae", "ssim", "sam_deg",
                    "params_train")


def ablate(cfg: TrainConfig, out_dir, variants=VARIANTS, seeds=None, progress=None) -> list[dict]:
    """Train every variant for every seed; writes ``ablation.csv`` and returns its rows.

    Runs whose ``manifest.json`` already exists with a matching input hash are reused.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed] if seeds is None else list(seeds)
    rows = []
    for v in variants:
        for s in seeds:
            vc = dataclasses.replace(cfg.variant(v), seed=s)
            run_dir = out / f"{v}_seed{s}"
            man = _cached_manifest(run_dir, vc)
            if man is None:
                log.info("training %s seed %d", v, s)
                man = train(vc, run_dir, progress).to_dict()
            fm = man["final_metrics"]
            rows.append({"variant": v, "seed": s, "psnr_init": man["psnr_init"], "psnr_final": man["psnr_final"],
                         "rmse": fm["rmse"], "mrae": fm["mrae"], "ssim": fm["ssim_mean"], "sam_deg": fm["sam_deg"],
                         "params_train": man["params_train"]})
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def _cached_manifest(run_dir: Path, cfg: TrainConfig) -> dict | None:
    path = run_dir / "manifest.json"
    if not path.is_file():
        return None
    try:
        man = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    return man if man.get("input_hash") == input_hash(cfg) else None


def median_psnr(rows: list[dict]) -> dict[str, float]:
    by = {}
    for r in rows:
        by.setdefault(r["variant"], []).append(r["psnr_final"])
    return {k: float(np.median(v)) for k, v in by.items()}
