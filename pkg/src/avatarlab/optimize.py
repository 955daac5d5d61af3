"""Reconstruction loss and the Adam update.

The loss combines per-pixel L1, a multi-scale gradient-difference proxy in the
perceptual slot, and thresholded hinge penalties keeping Gaussians close to
their triangles and reasonably sized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .avatar import GaussianAvatar, renormalize_quaternions

log = logging.getLogger(__name__)

N_PROXY_SCALES = 3
EPS_POS = 1.0  # hinge threshold on ||mu_local|| (triangle-scale units)
EPS_SCALE = 0.6  # hinge threshold on exp(log_scale_local)


@dataclass
class LossWeights:
    lambda_l1: float = 10.0
    lambda_lpips: float = 10.0
    lambda_pos: float = 0.1
    lambda_s: float = 10.0

    def __post_init__(self):
        if min(self.lambda_l1, self.lambda_lpips, self.lambda_pos, self.lambda_s) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l1: float
    perceptual_proxy: float
    position: float
    scaling: float
    total: float

    def as_dict(self):
        return {
            "l1": self.l1,
            "perceptual_proxy": self.perceptual_proxy,
            "position": self.position,
            "scaling": self.scaling,
            "total": self.total,
        }


def _avg_pool2(x):
    h, w = x.shape[:2]
    h2, w2 = h // 2, w // 2
    return x[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2, 3).mean(axis=(1, 3))


def _avg_pool2_backward(grad, orig_shape):
    h, w = orig_shape[:2]
    h2, w2 = grad.shape[:2]
    out = np.zeros((h, w, 3))
    up = np.repeat(np.repeat(grad, 2, axis=0), 2, axis=1) / 4.0
    out[: 2 * h2, : 2 * w2] = up
    return out


def _grad_images(x):
    return x[:, 1:] - x[:, :-1], x[1:, :] - x[:-1, :]


def image_losses(rendered, target):
    """L1 + multi-scale edge-difference proxy over a stack of frames.

    rendered/target: (F, H, W, 3) arrays. Returns (l1, proxy, grad) where
    grad is dL/d(rendered pixels) for l1 + proxy with unit weights each.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError("rendered and target videos must have the same shape")

    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    grad_l1 = np.sign(diff) / diff.size

    proxy = 0.0
    grad_proxy = np.zeros_like(rendered)
    n_frames = rendered.shape[0]
    for fidx in range(n_frames):
        r, t = rendered[fidx], target[fidx]
        chain = []  # (r_scale, t_scale) from fine to coarse
        for s in range(N_PROXY_SCALES):
            chain.append((r, t))
            if min(r.shape[0], r.shape[1]) >= 4:
                r, t = _avg_pool2(r), _avg_pool2(t)
        grads_per_scale = []
        for r, t in chain:
            dxr, dyr = _grad_images(r)
            dxt, dyt = _grad_images(t)
            ex, ey = dxr - dxt, dyr - dyt
            count = ex.size + ey.size
            proxy += (np.abs(ex).sum() + np.abs(ey).sum()) / count / len(chain) / n_frames
            g = np.zeros_like(r)
            sx = np.sign(ex) / count / len(chain) / n_frames
            sy = np.sign(ey) / count / len(chain) / n_frames
            g[:, 1:] += sx
            g[:, :-1] -= sx
            g[1:, :] += sy
            g[:-1, :] -= sy
            grads_per_scale.append(g)
        # push coarse-scale grads back up through the average pooling
        g_acc = grads_per_scale[-1]
        for level in range(len(chain) - 2, -1, -1):
            g_acc = _avg_pool2_backward(g_acc, chain[level][0].shape)
            g_acc += grads_per_scale[level]
        grad_proxy[fidx] = g_acc
    return l1, float(proxy), grad_l1, grad_proxy


def regularizer_losses(avatar: GaussianAvatar, eps_pos=EPS_POS, eps_scale=EPS_SCALE):
    """Hinge penalties on local offsets and world-relative scales, with grads."""
    N = avatar.n_gaussians
    mu = avatar.mu_local
    norms = np.linalg.norm(mu, axis=1)
    excess = np.maximum(0.0, norms - eps_pos)
    position = float(np.mean(excess**2))
    safe = np.maximum(norms, 1e-12)
    grad_mu = (2.0 * excess / safe / N)[:, None] * mu

    s = np.exp(avatar.log_scale_local)
    hing = np.maximum(0.0, s - eps_scale)
    scaling = float(np.mean(np.sum(hing**2, axis=1)))
    grad_ls = 2.0 * hing * s / N
    return position, scaling, grad_mu, grad_ls


def loss_total(rendered, target, avatar: GaussianAvatar, weights: LossWeights,
               eps_pos=EPS_POS, eps_scale=EPS_SCALE):
    """Full reconstruction loss.

    Returns (LossBreakdown, grad_pixels, reg_grads) where grad_pixels is
    dTotal/d(rendered pixels) and reg_grads holds dTotal/d(mu_local) and
    dTotal/d(log_scale_local).
    """
    l1, proxy, g_l1, g_proxy = image_losses(rendered, target)
    position, scaling, g_mu, g_ls = regularizer_losses(avatar, eps_pos, eps_scale)
    total = (
        weights.lambda_l1 * l1
        + weights.lambda_lpips * proxy
        + weights.lambda_pos * position
        + weights.lambda_s * scaling
    )
    breakdown = LossBreakdown(l1, proxy, position, scaling, total)
    grad_pixels = weights.lambda_l1 * g_l1 + weights.lambda_lpips * g_proxy
    reg_grads = {
        "mu_local": weights.lambda_pos * g_mu,
        "log_scale_local": weights.lambda_s * g_ls,
    }
    return breakdown, grad_pixels, reg_grads


DEFAULT_LEARNING_RATES = {
    "mu_local": 1.6e-4,
    "rot_local": 1e-3,
    "log_scale_local": 5e-3,
    "opacity_logit": 5e-2,
    "color": 2.5e-3,
}
MU_LR_FINAL_FACTOR = 0.01  # mu_local lr decays exponentially to 1% over the run


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def learning_rates_at(iteration, total_iters, base=None):
    """Per-group learning rates with the exponential mu_local decay."""
    base = dict(base or DEFAULT_LEARNING_RATES)
    frac = 0.0 if total_iters <= 0 else min(iteration / total_iters, 1.0)
    base["mu_local"] = base["mu_local"] * (MU_LR_FINAL_FACTOR**frac)
    return base


def adam_step(params, grads, state: AdamState, learning_rates,
              beta1=0.9, beta2=0.99, eps=1e-8):
    """One Adam update (bias-corrected) applied in place to `params`.

    Groups with non-finite gradients are skipped and logged; missing groups
    are left untouched.
    """
    state.t += 1
    t = state.t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for '{name}'")
        if not np.isfinite(g).all():
            log.warning("skipping Adam step for '%s' at t=%d: non-finite gradient", name, t)
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p -= learning_rates[name] * mhat / (np.sqrt(vhat) + eps)
    return params, state


def optimizer_step(avatar: GaussianAvatar, grads, state: AdamState, learning_rates):
    """Adam step on the avatar followed by quaternion renormalization."""
    adam_step(avatar.params(), grads, state, learning_rates)
    renormalize_quaternions(avatar)
    return state
