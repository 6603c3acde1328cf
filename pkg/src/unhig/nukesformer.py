"""U-shaped generators of cascaded Nuk-MSA blocks, patch discriminators and the
projection heads used by the contrastive losses."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ChannelMismatch, OddSpatialSize, ShapeMismatch
from .gmsa import NukMsaBlock
from .gradcore import Module, Tensor, init_normal, ops, zeros


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int
    out_channels: int
    base_channels: int = 8
    stage_blocks: tuple = (1, 1, 2, 1, 1)
    heads: int = 1
    use_gabor: bool = True
    uniform_kan: bool = False
    n_kernels: int = 4
    ksize: int = 7
    sigma: float = 2.0
    degree: int = 3
    n_interior: int = 8
    spline_range: float = 4.0
    gabor_alt_form: bool = False

    def __post_init__(self):
        sb = tuple(int(n) for n in self.stage_blocks)
        object.__setattr__(self, "stage_blocks", sb)
        if len(sb) % 2 == 0 or any(n < 0 for n in sb):
            raise ShapeMismatch("stage_blocks needs an odd number of non-negative entries")
        if self.in_channels < 1 or self.out_channels < 1 or self.base_channels < 1:
            raise ShapeMismatch("channel counts must be positive")

    @property
    def n_down(self) -> int:
        return len(self.stage_blocks) // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_blocks"] = list(self.stage_blocks)
        return d


class _Map(Module):
    """1x1 channel map with bias."""

    def __init__(self, cin, cout, rng, dtype, gain=1.0):
        self.w = init_normal(rng, (cout, cin), cin, gain=gain, dtype=dtype)
        self.b = zeros((cout,), dtype)

    def __call__(self, x):
        return ops.conv1x1(x, self.w, self.b)


class Generator(Module):
    """Encoder stages, bottleneck and decoder stages with concat-and-map skip fusion.

    ``bypass=True`` runs the domain-preserving pass: the input projection is
    replaced by the bypass adapter (fed an image of the *output* domain), the
    outermost pooling/upsampling pair is skipped, and the input is added back.
    """

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        base, n = cfg.base_channels, cfg.n_down
        sb = cfg.stage_blocks
        blk = dict(heads=cfg.heads, use_gabor=cfg.use_gabor, uniform_kan=cfg.uniform_kan,
                   n_kernels=cfg.n_kernels, ksize=cfg.ksize, sigma=cfg.sigma, degree=cfg.degree,
                   n_interior=cfg.n_interior, r=cfg.spline_range, alt_form=cfg.gabor_alt_form,
                   dtype=dtype)
        self.in_map = _Map(cfg.in_channels, base, rng, dtype)
        self.enc = [[NukMsaBlock(base * 2 ** i, rng, **blk) for _ in range(sb[i])] for i in range(n)]
        self.down = [_Map(base * 2 ** i, base * 2 ** (i + 1), rng, dtype) for i in range(n)]
        self.mid = [NukMsaBlock(base * 2 ** n, rng, **blk) for _ in range(sb[n])]
        self.up, self.fuse, self.dec = [], [], []
        for j in range(n):
            c_hi, c_lo = base * 2 ** (n - j), base * 2 ** (n - j - 1)
            self.up.append(_Map(c_hi, c_lo, rng, dtype))
            self.fuse.append(_Map(2 * c_lo, c_lo, rng, dtype))
            self.dec.append([NukMsaBlock(c_lo, rng, **blk) for _ in range(sb[n + 1 + j])])
        self.out_map = _Map(base, cfg.out_channels, rng, dtype, gain=0.1)
        self.bypass_in = _Map(cfg.out_channels, base, rng, dtype)

    def inference_parameters(self) -> dict:
        return {k: v for k, v in self.named_parameters() if not k.startswith("bypass_in.")}

    def auxiliary_parameters(self) -> dict:
        return {k: v for k, v in self.named_parameters() if k.startswith("bypass_in.")}

    def __call__(self, img, bypass: bool = False, return_features: bool = False):
        return generator_forward(self, img, bypass=bypass, return_features=return_features)


def generator_forward(g: Generator, img, bypass: bool = False, return_features: bool = False):
    cfg = g.cfg
    img = img if isinstance(img, Tensor) else Tensor(img)
    if img.ndim != 3:
        raise ShapeMismatch(f"generator input must be (C, H, W), got {img.shape}")
    want = cfg.out_channels if bypass else cfg.in_channels
    if img.shape[0] != want:
        err = ChannelMismatch if bypass else ShapeMismatch
        raise err(f"generator expects {want} input channels, got {img.shape[0]}")
    step = 2 ** (cfg.n_down - 1 if bypass else cfg.n_down)
    if img.shape[1] % step or img.shape[2] % step:
        raise OddSpatialSize(f"spatial size {img.shape[1:]} not divisible by {step}")

    x1 = g.bypass_in(img) if bypass else g.in_map(img)
    h = x1
    skips = []
    for i, (stage, down) in enumerate(zip(g.enc, g.down)):
        for blk in stage:
            h = blk(h)
        skips.append(h)
        if not (bypass and i == 0):
            h = ops.avg_pool2(h)
        h = down(h)
    for blk in g.mid:
        h = blk(h)
    last = cfg.n_down - 1
    for j, (up, fuse, stage, skip) in enumerate(zip(g.up, g.fuse, g.dec, reversed(skips))):
        if not (bypass and j == last):
            h = ops.upsample2(h)
        h = fuse(ops.concat([up(h), skip], axis=0))
        for blk in stage:
            h = blk(h)
    feat = h
    out = g.out_map(ops.add(feat, x1))
    if bypass:
        out = ops.add(img, out)
    return (out, feat) if return_features else out


def bypass_forward(g: Generator, img):
    return generator_forward(g, img, bypass=True)


class Discriminator(Module):
    """Three stride-2 4x4 convolutions with leaky ReLU, then a 1x1 sigmoid patch head."""

    def __init__(self, in_channels: int, rng: np.random.Generator, width: int = 8, dtype=np.float64):
        self.in_channels = in_channels
        chans = [in_channels, width, 2 * width, 4 * width]
        self.conv_w = [init_normal(rng, (chans[i + 1], chans[i], 4, 4), chans[i] * 16, gain=1.4, dtype=dtype)
                       for i in range(3)]
        self.conv_b = [zeros((chans[i + 1],), dtype) for i in range(3)]
        self.head_w = init_normal(rng, (1, chans[3]), chans[3], dtype=dtype)
        self.head_b = zeros((1,), dtype)

    def logits(self, img) -> Tensor:
        if img.ndim != 3 or img.shape[0] != self.in_channels:
            raise ShapeMismatch(f"discriminator expects {self.in_channels} channels, got {img.shape}")
        h = img
        for w, b in zip(self.conv_w, self.conv_b):
            h = ops.leaky_relu(ops.conv2d(h, w, b, stride=2, padding=1), 0.2)
        return ops.conv1x1(h, self.head_w, self.head_b)

    def __call__(self, img) -> Tensor:
        return discriminate(self, img)


def discriminate(d: Discriminator, img) -> Tensor:
    """Per-patch probability map, values in (0, 1)."""
    img = img if isinstance(img, Tensor) else Tensor(img)
    return ops.sigmoid(d.logits(img))


class ProjectionHead(Module):
    """Two-layer MLP mapping feature vectors (P, C) to codes (P, width)."""

    def __init__(self, in_dim: int, rng: np.random.Generator, width: int = 64, dtype=np.float64):
        self.w1 = init_normal(rng, (in_dim, width), in_dim, dtype=dtype)
        self.b1 = zeros((width,), dtype)
        self.w2 = init_normal(rng, (width, width), width, dtype=dtype)
        self.b2 = zeros((width,), dtype)

    def __call__(self, v: Tensor) -> Tensor:
        h = ops.gelu(ops.add(ops.matmul(v, self.w1), self.b1))
        return ops.add(ops.matmul(h, self.w2), self.b2)


@dataclass(frozen=True)
class ModelConfig:
    bands: int = 31
    base_channels: int = 8
    stage_blocks: tuple = (1, 1, 2, 1, 1)
    heads: int = 1
    use_gabor: bool = True
    uniform_kan: bool = False
    n_kernels: int = 4
    ksize: int = 7
    sigma: float = 2.0
    degree: int = 3
    n_interior: int = 8
    spline_range: float = 4.0
    gabor_alt_form: bool = False
    disc_width: int = 8
    head_width: int = 64

    def generator(self, direction: str) -> GeneratorConfig:
        cin, cout = (3, self.bands) if direction == "rh" else (self.bands, 3)
        return GeneratorConfig(
            cin, cout, self.base_channels, tuple(self.stage_blocks), self.heads, self.use_gabor,
            self.uniform_kan, self.n_kernels, self.ksize, self.sigma, self.degree, self.n_interior,
            self.spline_range, self.gabor_alt_form)


GROUPS = ("g_rh", "g_rh_aux", "g_hr", "g_hr_aux", "d_h", "d_r", "f_a", "f_b")
INFER_GROUPS = ("g_rh",)


class NukesFormer(Module):
    """Both generators, both discriminators and the two contrastive projection heads."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.g_rh = Generator(cfg.generator("rh"), rng, dtype)
        self.g_hr = Generator(cfg.generator("hr"), rng, dtype)
        self.d_h = Discriminator(cfg.bands, rng, cfg.disc_width, dtype)
        self.d_r = Discriminator(3, rng, cfg.disc_width, dtype)
        self.f_a = ProjectionHead(cfg.base_channels, rng, cfg.head_width, dtype)
        self.f_b = ProjectionHead(cfg.base_channels, rng, cfg.head_width, dtype)

    def groups(self) -> dict[str, dict]:
        return {
            "g_rh": self.g_rh.inference_parameters(),
            "g_rh_aux": self.g_rh.auxiliary_parameters(),
            "g_hr": self.g_hr.inference_parameters(),
            "g_hr_aux": self.g_hr.auxiliary_parameters(),
            "d_h": self.d_h.parameters(),
            "d_r": self.d_r.parameters(),
            "f_a": self.f_a.parameters(),
            "f_b": self.f_b.parameters(),
        }

    def generator_side(self) -> dict:
        out = {}
        for g in ("g_rh", "g_rh_aux", "g_hr", "g_hr_aux", "f_a", "f_b"):
            out.update({f"{g}/{k}": v for k, v in self.groups()[g].items()})
        return out

    def discriminator_side(self) -> dict:
        out = {}
        for g in ("d_h", "d_r"):
            out.update({f"{g}/{k}": v for k, v in self.groups()[g].items()})
        return out


def count_params(model: NukesFormer, role: str = "train") -> int:
    groups = model.groups()
    if role == "infer":
        names = INFER_GROUPS
    elif role == "train":
        names = GROUPS
    else:
        raise ValueError(f"role must be 'train' or 'infer', got {role!r}")
    return int(sum(p.size for g in names for p in groups[g].values()))


def cycle_pass(x_hsi, y_rgb, g_rh, g_hr, with_features: bool = False):
    """Both cycles with the same two generator instances.

    Returns ``(Y_f, X_r, X_hat_f, Y_hat_r)``; with ``with_features`` also a dict of
    final-stage features ``{"Y_f", "X_r", "X_hat_f", "Y_hat_r"}`` keyed by the
    output each generator call produced.
    """
    if not with_features:
        y_f = g_hr(x_hsi)
        x_r = g_rh(y_f)
        x_hat_f = g_rh(y_rgb)
        y_hat_r = g_hr(x_hat_f)
        return y_f, x_r, x_hat_f, y_hat_r
    y_f, f1 = g_hr(x_hsi, return_features=True)
    x_r, f2 = g_rh(y_f, return_features=True)
    x_hat_f, f3 = g_rh(y_rgb, return_features=True)
    y_hat_r, f4 = g_hr(x_hat_f, return_features=True)
    return (y_f, x_r, x_hat_f, y_hat_r), {"Y_f": f1, "X_r": f2, "X_hat_f": f3, "Y_hat_r": f4}
