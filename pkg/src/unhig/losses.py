"""Training objectives: cycle, non-degraded, adversarial, the two patch contrastive
terms and their weighted sum."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParam, ShapeMismatch, TooFewPatches, ZeroVector
from .gradcore import Tensor, ops
from .gradcore.tensor import as_tensor
from .nukesformer import bypass_forward

SCORE_EPS = 1e-7
COS_CLAMP = 1e-7
PART_NAMES = ("L_cyc", "L_nde", "L_adv", "L_spec", "L_geo")


@dataclass(frozen=True)
class LossWeights:
    cyc: float = 1.0
    nde: float = 0.5
    adv: float = 1.0
    spec: float = 0.25
    geo: float = 0.25

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0):
                raise InvalidParam(f"loss weight {k} must be >= 0, got {v}")

    def as_tuple(self) -> tuple:
        return (self.cyc, self.nde, self.adv, self.spec, self.geo)


@dataclass(frozen=True, eq=False)
class PatchCodeSet:
    """Batched contrastive samples.

    ``query`` and ``positive`` are (P, d); ``negatives`` is (P, N, d).
    ``query_index`` holds the spatial index of each query; ``neg_index`` and
    ``neg_domain`` (0 for A, 1 for B) describe where every negative came from.
    """

    query: Tensor
    positive: Tensor
    negatives: Tensor
    query_index: np.ndarray
    neg_index: np.ndarray
    neg_domain: np.ndarray
    tau: float = 0.07

    def __post_init__(self):
        q, p, n = self.query, self.positive, self.negatives
        if q.ndim != 2 or p.shape != q.shape:
            raise ShapeMismatch(f"query {q.shape} and positive {p.shape} must be equal (P, d)")
        if n.ndim != 3 or n.shape[0] != q.shape[0] or n.shape[2] != q.shape[1]:
            raise ShapeMismatch(f"negatives {n.shape} must be (P, N, {q.shape[1]})")
        if not self.tau > 0:
            raise InvalidParam("temperature must be positive")

    @property
    def n_negatives(self) -> int:
        return self.negatives.shape[1]

    def with_tau(self, tau: float) -> "PatchCodeSet":
        return PatchCodeSet(self.query, self.positive, self.negatives, self.query_index,
                            self.neg_index, self.neg_domain, tau)


def cycle_loss(x, y_hat, outputs) -> Tensor:
    """``mse(X_r, X) + mse(Y_hat_r, Y_hat)`` from the four ``cycle_pass`` outputs."""
    x, y_hat = as_tensor(x), as_tensor(y_hat)
    _, x_r, _, y_hat_r = outputs
    if x_r.shape != x.shape or y_hat_r.shape != y_hat.shape:
        raise ShapeMismatch(f"cycle shapes differ: {x_r.shape} vs {x.shape}, {y_hat_r.shape} vs {y_hat.shape}")
    return ops.add(ops.mse(x_r, x), ops.mse(y_hat_r, y_hat))


def non_degraded_loss(g_rh, g_hr, x, y_hat, forward=bypass_forward) -> Tensor:
    """``mse(G_rh~(X), X) + mse(G_hr~(Y), Y)``: each generator, fed its own output domain, should pass it through."""
    x, y_hat = as_tensor(x), as_tensor(y_hat)
    return ops.add(ops.mse(forward(g_rh, x), x), ops.mse(forward(g_hr, y_hat), y_hat))


def _cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine along the last axis; ``a`` (..., d) broadcasts against ``b``."""
    na, nb = ops.norm(a, axis=-1), ops.norm(b, axis=-1)
    if np.any(na.data == 0) or np.any(nb.data == 0):
        raise ZeroVector("contrastive code with zero norm")
    dot = ops.sum(ops.mul(a, b), axis=-1)
    return ops.div(dot, ops.mul(na, nb))


def _info_nce(pos_logit: Tensor, neg_logits: Tensor) -> Tensor:
    """Mean over queries of ``-log(e^pos / (e^pos + sum e^neg))``."""
    p = pos_logit.shape[0]
    allv = ops.concat([ops.reshape(pos_logit, (p, 1)), neg_logits], axis=1)
    return ops.mean(ops.sub(ops.logsumexp(allv, axis=1), pos_logit))


def _similarity_logits(codes: PatchCodeSet, kernel):
    q = codes.query
    p, d = q.shape
    pos = kernel(q, codes.positive)
    neg = kernel(ops.reshape(q, (p, 1, d)), codes.negatives) if codes.n_negatives else Tensor(np.zeros((p, 0)))
    return pos, neg


def spectral_angle(a: Tensor, b: Tensor) -> Tensor:
    """Angle in radians between code vectors; cosine clamped away from +-1 to keep the gradient finite."""
    c = _cosine(a, b)
    return ops.arccos(ops.clip(c, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP))


def spectral_contrastive(codes: PatchCodeSet, tau_s: float = 0.5) -> Tensor:
    """InfoNCE with similarity ``exp(-angle / tau_s)``."""
    if not tau_s > 0:
        raise InvalidParam("tau_s must be positive")
    pos, neg = _similarity_logits(codes, lambda a, b: ops.mul(spectral_angle(a, b), -1.0 / tau_s))
    return _info_nce(pos, neg)


def geometric_contrastive(codes: PatchCodeSet) -> Tensor:
    """InfoNCE with similarity ``exp(cos(u, v) / tau)``, ``tau`` taken from the code set."""
    pos, neg = _similarity_logits(codes, lambda a, b: ops.mul(_cosine(a, b), 1.0 / codes.tau))
    return _info_nce(pos, neg)


def project_codes(head, feat) -> Tensor:
    """Apply a projection head to every pixel of a (C, H, W) feature map -> (H*W, d)."""
    feat = as_tensor(feat)
    c = feat.shape[0]
    return head(ops.transpose(ops.reshape(feat, (c, -1)), (1, 0)))


def dcpm_sample(features_a, features_b, n_patches: int = 64, n_negatives: int = 15, seed=0,
                tau: float = 0.07) -> PatchCodeSet:
    """Cross-domain patch codes: query from A, positive from B at the same pixel,
    negatives from other pixels of either domain.

    Inputs are per-pixel code matrices (S, d) or feature maps (d, H, W).
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    a, b = _as_codes(features_a), _as_codes(features_b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"code maps differ: {a.shape} vs {b.shape}")
    s = a.shape[0]
    if n_patches < 1 or n_patches > s:
        raise TooFewPatches(f"asked for {n_patches} patches from {s} positions")
    if n_negatives < 0:
        raise InvalidParam("n_negatives must be >= 0")
    if n_negatives > 0 and s < 2:
        raise TooFewPatches("negatives need at least two positions")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q_idx = np.sort(rng.choice(s, size=n_patches, replace=False))
    # shift by 1..s-1 so a negative never lands on its query's own pixel
    shift = rng.integers(1, s, size=(n_patches, n_negatives)) if s > 1 else np.zeros((n_patches, 0), int)
    neg_idx = (q_idx[:, None] + shift) % s
    neg_dom = rng.integers(0, 2, size=(n_patches, n_negatives))
    both = ops.concat([a, b], axis=0)  # rows [0, s) from A, [s, 2s) from B
    d = a.shape[1]
    if n_negatives:
        negs = ops.take(both, (neg_idx + neg_dom * s).reshape(-1), axis=0)
        negs = ops.reshape(negs, (n_patches, n_negatives, d))
    else:
        negs = Tensor(np.zeros((n_patches, 0, d), dtype=a.dtype))
    return PatchCodeSet(ops.take(a, q_idx, axis=0), ops.take(b, q_idx, axis=0), negs,
                        q_idx, neg_idx, neg_dom, tau)


def _as_codes(f) -> Tensor:
    f = as_tensor(f)
    if f.ndim == 3:
        c = f.shape[0]
        return ops.transpose(ops.reshape(f, (c, -1)), (1, 0))
    if f.ndim != 2:
        raise ShapeMismatch(f"expected (S, d) codes or (d, H, W) features, got {f.shape}")
    return f


def _log_clamped(p: Tensor) -> Tensor:
    return ops.log(ops.clip(p, SCORE_EPS, 1.0 - SCORE_EPS))


def adversarial_terms(score_real, score_fake):
    """One domain: ``(gen, disc)`` with ``disc = E log D(real) + E log(1 - D(fake))`` and ``gen = -E log D(fake)``."""
    disc = ops.add(ops.mean(_log_clamped(score_real)),
                   ops.mean(_log_clamped(ops.sub(1.0, score_fake))))
    gen = ops.neg(ops.mean(_log_clamped(score_fake)))
    return gen, disc


def adversarial_loss(d_h, d_r, real_x, real_y_hat, fake_x_hat_f, fake_y_f):
    """Both domains summed; returns ``(gen_term, disc_term)``.

    The discriminator maximises ``disc_term`` (it is <= 0); the generators minimise ``gen_term``.
    """
    g_h, d_h_term = adversarial_terms(d_h(real_x), d_h(fake_x_hat_f))
    g_r, d_r_term = adversarial_terms(d_r(real_y_hat), d_r(fake_y_f))
    return ops.add(g_h, g_r), ops.add(d_h_term, d_r_term)


def total_loss(parts, w: LossWeights = LossWeights()) -> Tensor:
    """``sum lambda_i * part_i``; ``parts`` is a mapping keyed by :data:`PART_NAMES` or a 5-sequence."""
    if isinstance(parts, dict):
        parts = [parts[k] for k in PART_NAMES]
    if len(parts) != 5:
        raise InvalidParam(f"need 5 loss parts, got {len(parts)}")
    out = None
    for lam, part in zip(w.as_tuple(), parts):
        term = ops.mul(as_tensor(part), float(lam))
        out = term if out is None else ops.add(out, term)
    return out
