"""Brute-force reference implementations used by the tests.

Everything here is deliberately loop-based and shares no code with the package.
"""
import math

import numpy as np


def cox_de_boor(i, p, x, knots):
    """Textbook recursion with 0/0 := 0."""
    if p == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    a = b = 0.0
    if knots[i + p] != knots[i]:
        a = (x - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(i, p - 1, x, knots)
    if knots[i + p + 1] != knots[i + 1]:
        b = (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) * cox_de_boor(i + 1, p - 1, x, knots)
    return a + b


def basis_row(p, x, knots):
    n = len(knots) - p - 1
    return np.array([cox_de_boor(i, p, x, knots) for i in range(n)])


def nurbs(p, x, knots, ctrl, w):
    row = basis_row(p, x, knots)
    return float(np.dot(row, w * ctrl) / np.dot(row, w))


def random_knots(rng, p, n_interior, lo=-1.0, hi=1.0):
    """Clamped knot vector with strictly increasing random interior knots."""
    inner = np.sort(rng.uniform(lo, hi, size=n_interior))
    return np.concatenate([np.full(p + 1, lo), inner, np.full(p + 1, hi)])


def degrade_loops(d, cube):
    c, h, w = cube.shape
    out = np.zeros((3, h, w))
    for k in range(3):
        for r in range(h):
            for s in range(w):
                acc = 0.0
                for b in range(c):
                    acc += d[k, b] * cube[b, r, s]
                out[k, r, s] = acc
    return out


def reflect(i, n):
    """numpy 'reflect' padding index (edge not repeated)."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    return i if i < n else period - i


def conv_reflect_loops(img, kern):
    """Same-size correlation of one (H, W) image with a (k, k) kernel, reflect boundary."""
    h, w = img.shape
    k = kern.shape[0]
    r = k // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(k):
                for dx in range(k):
                    acc += kern[dy, dx] * img[reflect(y + dy - r, h), reflect(x + dx - r, w)]
            out[y, x] = acc
    return out


def spectral_attention_loops(x, wq, wk, wv):
    """Channel attention with x (C, H, W): A[a, b] = softmax_a(sum_s K[a,s] Q[b,s] / sqrt(S)),
    out[b] = sum_a A[a, b] V[a]."""
    c, h, w = x.shape
    s = h * w
    x2 = x.reshape(c, s)
    q = np.zeros((c, s))
    k = np.zeros((c, s))
    v = np.zeros((c, s))
    for i in range(c):
        for j in range(c):
            q[i] += wq[i, j] * x2[j]
            k[i] += wk[i, j] * x2[j]
            v[i] += wv[i, j] * x2[j]
    logits = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            logits[a, b] = sum(k[a, t] * q[b, t] for t in range(s)) / math.sqrt(s)
    att = np.zeros((c, c))
    for b in range(c):
        col = [math.exp(logits[a, b] - logits[:, b].max()) for a in range(c)]
        z = sum(col)
        for a in range(c):
            att[a, b] = col[a] / z
    out = np.zeros((c, s))
    for b in range(c):
        for a in range(c):
            out[b] += att[a, b] * v[a]
    return out.reshape(c, h, w), att


def gabor_loops(f, theta, sigma, k, alt=False):
    out = np.zeros((k, k))
    r = (k - 1) // 2
    for iy in range(k):
        for ix in range(k):
            x, y = ix - r, iy - r
            xt = x * math.cos(theta) + y * math.sin(theta)
            yt = -x * math.sin(theta) + y * math.cos(theta)
            second = (yt / f) ** 2 if alt else (yt ** 2 / f) ** 2
            out[iy, ix] = math.exp(-(xt ** 2 + second) / (2 * sigma ** 2))
    return out


# ---------------------------------------------------------------- metrics

def rmse_loops(x, y):
    acc, n = 0.0, 0
    for v1, v2 in zip(x.ravel(), y.ravel()):
        acc += (v1 - v2) ** 2
        n += 1
    return math.sqrt(acc / n)


def mrae_loops(x, y, guard=1e-6):
    acc, n = 0.0, 0
    for v1, v2 in zip(x.ravel(), y.ravel()):
        if abs(v1) >= guard:
            acc += abs(v1 - v2) / abs(v1)
            n += 1
    return acc / n


def psnr_loops(x, y):
    lo, hi = min(x.ravel()), max(x.ravel())
    acc, n = 0.0, 0
    for v1, v2 in zip(x.ravel(), y.ravel()):
        a = (v1 - lo) / (hi - lo) * 255.0
        b = (v2 - lo) / (hi - lo) * 255.0
        acc += (a - b) ** 2
        n += 1
    return 10.0 * math.log10(255.0 ** 2 / (acc / n))


def ssim_loops(x, y, c1=1e-4, c2=9e-4):
    vals = []
    for b in range(x.shape[0]):
        u, v = list(x[b].ravel()), list(y[b].ravel())
        n = len(u)
        mu, mv = sum(u) / n, sum(v) / n
        su = sum((a - mu) ** 2 for a in u) / n
        sv = sum((a - mv) ** 2 for a in v) / n
        cov = sum((a - mu) * (c - mv) for a, c in zip(u, v)) / n
        vals.append(((2 * mu * mv + c1) * (2 * cov + c2)) / ((mu ** 2 + mv ** 2 + c1) * (su + sv + c2)))
    return sum(vals) / len(vals)


def _angle(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return math.degrees(math.acos(max(-1.0, min(1.0, dot / (nu * nv)))))


def sam_band_loops(x, y):
    return sum(_angle(list(x[b].ravel()), list(y[b].ravel())) for b in range(x.shape[0])) / x.shape[0]


def sam_pixel_loops(x, y):
    c, h, w = x.shape
    angles = [_angle([x[b, r, s] for b in range(c)], [y[b, r, s] for b in range(c)])
              for r in range(h) for s in range(w)]
    return sum(angles) / len(angles)


# ---------------------------------------------------------------- contrastive

def info_nce_loops(q, pos, negs, sim):
    """Mean over rows of -log(sim(q,pos) / (sim(q,pos) + sum sim(q,neg)))."""
    total = 0.0
    for i in range(len(q)):
        sp = sim(q[i], pos[i])
        sn = sum(sim(q[i], n) for n in negs[i])
        total += -math.log(sp / (sp + sn))
    return total / len(q)


def cos_sim(u, v):
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
