"""EWA-style differentiable Gaussian splat renderer (forward + analytic backward).

Forward: project means, build 2D covariances through the local affine Jacobian,
sort globally back-to-front, then alpha-composite front-to-back per pixel with
support cut at 3 sigma or alpha < 1/255. `render_reference` is an independent
brute-force per-pixel compositor kept deliberately naive; the fast path must
match it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .avatar import WorldGaussians
from .headmodel import CameraPose
from .mathutil import quat_to_rotmat, rotmat_grad_to_quat_grad, sigmoid

log = logging.getLogger(__name__)

Z_NEAR = 0.01
DET_EPS = 1e-10
REG_PX2 = 0.3  # diagonal regularizer applied to singular 2D covariances

DEFAULT_BACKGROUND = np.array([0.5, 0.5, 0.5])


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass
class Image:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    alpha: np.ndarray  # (H, W) in [0, 1]

    @property
    def shape(self):
        return self.rgb.shape[:2]


@dataclass
class RenderGrads:
    """Per-Gaussian partials of a scalar loss w.r.t. world-space parameters."""

    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    def as_dict(self):
        return {
            "means": self.means,
            "quats": self.quats,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }

    def check_finite(self):
        for name, arr in self.as_dict().items():
            bad = ~np.isfinite(arr)
            if bad.any():
                idx = int(np.argwhere(bad)[0][0])
                raise NonFiniteGradientError(
                    f"non-finite gradient in '{name}' at Gaussian index {idx}"
                )


def _project_gaussians(world: WorldGaussians, camera: CameraPose, width, height,
                       opacities=None):
    """Screen-space quantities for every Gaussian, plus intermediates for backward."""
    Wr = camera.rotation_w2c()
    f, cx, cy = camera.intrinsics(width, height)
    if opacities is None:
        opacities = np.ones(world.n_gaussians)
    (t, tz, depth, u, v, M, M3, B, R, conic, bbox, valid, n_singular) = (
        _kernels.project_forward(
            np.ascontiguousarray(world.means), np.ascontiguousarray(world.quats),
            np.ascontiguousarray(world.log_scales), np.ascontiguousarray(opacities),
            camera.position, Wr, f, cx, cy, width, height, Z_NEAR, DET_EPS, REG_PX2,
        )
    )
    if n_singular:
        log.warning("regularizing %d singular 2D covariances (+%.1f px^2)", n_singular, REG_PX2)

    order = np.argsort(depth[valid], kind="stable")
    order = np.flatnonzero(valid)[order]

    return {
        "Wr": Wr, "f": f, "t": t, "tz": tz, "depth": depth, "valid": valid,
        "u": u, "v": v, "M": M, "B": B, "R": R, "M3": M3,
        "conic": conic, "bbox": bbox, "order": order,
    }


def _as_background(background):
    if background is None:
        return DEFAULT_BACKGROUND.copy()
    return np.asarray(background, dtype=np.float64)


def render_with_cache(world: WorldGaussians, camera: CameraPose, width, height, background=None):
    """Forward render; returns (Image, cache) with everything backward needs."""
    if width < 16 or height < 16:
        raise ValueError("render resolution must be at least 16x16")
    bg = _as_background(background)
    if world.n_gaussians == 0:
        img = Image(np.tile(bg, (height, width, 1)), np.zeros((height, width)))
        return img, {"empty": True, "bg": bg, "width": width, "height": height}
    opac = sigmoid(world.opacity_logits)
    proj = _project_gaussians(world, camera, width, height, opacities=opac)
    rgb, T, mark = _kernels.composite_forward(
        proj["order"], proj["u"], proj["v"], proj["conic"], opac,
        np.ascontiguousarray(world.colors, dtype=np.float64), proj["bbox"],
        height, width, bg,
    )
    img = Image(rgb, 1.0 - T)
    cache = dict(proj)
    cache.update({"empty": False, "bg": bg, "T": T, "mark": mark, "opac": opac,
                  "width": width, "height": height})
    return img, cache


def render(world: WorldGaussians, camera: CameraPose, width, height, background=None):
    """Deterministic forward splatting render."""
    img, _ = render_with_cache(world, camera, width, height, background)
    return img


def render_backward(world: WorldGaussians, camera: CameraPose, grad_rgb,
                    grad_alpha=None, cache=None, width=None, height=None,
                    background=None):
    """Analytic gradients of a scalar loss through the full render chain.

    grad_rgb is dL/d(pixel rgb), (H, W, 3); grad_alpha optionally dL/d(alpha).
    Returns RenderGrads in world-space parameters.
    """
    grad_rgb = np.asarray(grad_rgb, dtype=np.float64)
    if not np.isfinite(grad_rgb).all():
        raise ValueError("image gradient contains non-finite values")
    if cache is None:
        h, w = grad_rgb.shape[:2]
        _, cache = render_with_cache(world, camera, w, h, background)
    if grad_rgb.shape[:2] != (cache["height"], cache["width"]):
        raise ValueError("image gradient resolution does not match forward pass")
    N = world.n_gaussians
    zeros = RenderGrads(
        np.zeros((N, 3)), np.zeros((N, 4)), np.zeros((N, 3)), np.zeros(N), np.zeros((N, 3))
    )
    if cache.get("empty"):
        return zeros
    if grad_alpha is None:
        grad_alpha = np.zeros_like(cache["T"])

    gu, gv, gcon, gop, gcol = _kernels.composite_backward(
        cache["order"], cache["u"], cache["v"], cache["conic"], cache["opac"],
        np.ascontiguousarray(world.colors, dtype=np.float64), cache["bbox"],
        cache["T"], cache["mark"], np.ascontiguousarray(grad_rgb),
        np.ascontiguousarray(grad_alpha, dtype=np.float64), cache["bg"],
        cache["height"], cache["width"],
    )

    valid = cache["valid"]
    gmeans, gR, glog_scales = _kernels.project_backward(
        gu, gv, gcon, cache["conic"], cache["M"], cache["M3"], cache["B"],
        cache["R"], np.ascontiguousarray(world.log_scales), cache["t"],
        cache["tz"], cache["f"], cache["Wr"], valid,
    )
    gquats = rotmat_grad_to_quat_grad(world.quats, gR)

    op = cache["opac"]
    gop_logit = gop * op * (1.0 - op)

    mask = valid.astype(np.float64)
    grads = RenderGrads(
        means=gmeans * mask[:, None],
        quats=gquats * mask[:, None],
        log_scales=glog_scales * mask[:, None],
        opacity_logits=gop_logit * mask,
        colors=gcol,
    )
    grads.check_finite()
    return grads


def render_reference(world: WorldGaussians, camera: CameraPose, width, height, background=None):
    """Brute-force per-pixel compositor: no tiling, no culling, exact sort.

    Independent oracle for the fast renderer; intentionally straightforward
    (matrix inverses per Gaussian, full-pixel loops).
    """
    bg = _as_background(background)
    rgb = np.tile(bg, (height, width, 1))
    alpha_out = np.zeros((height, width))
    if world.n_gaussians == 0:
        return Image(rgb, alpha_out)

    Wr = camera.rotation_w2c()
    focal, cx, cy = camera.intrinsics(width, height)
    opac = sigmoid(world.opacity_logits)
    R = quat_to_rotmat(world.quats)
    s = np.exp(world.log_scales)
    cov3 = np.einsum("nij,nj,nkj->nik", R, s**2, R)

    entries = []
    for i in range(world.n_gaussians):
        tc = Wr @ (world.means[i] - camera.position)
        if tc[2] <= Z_NEAR:
            continue
        u = cx + focal * tc[0] / tc[2]
        v = cy - focal * tc[1] / tc[2]
        J = np.array(
            [
                [focal / tc[2], 0.0, -focal * tc[0] / tc[2] ** 2],
                [0.0, -focal / tc[2], focal * tc[1] / tc[2] ** 2],
            ]
        )
        M = J @ Wr
        cov2 = M @ cov3[i] @ M.T
        if np.linalg.det(cov2) < DET_EPS or cov2[0, 0] <= 0 or cov2[1, 1] <= 0:
            cov2 = cov2 + REG_PX2 * np.eye(2)
        entries.append((tc[2], u, v, np.linalg.inv(cov2), opac[i], world.colors[i]))
    entries.sort(key=lambda e: e[0])

    for y in range(height):
        for x in range(width):
            T = 1.0
            color = np.zeros(3)
            for depth, u, v, icov, op, col in entries:
                d = np.array([x - u, y - v])
                q = d @ icov @ d
                if q > _kernels.SUPPORT_CUT:
                    continue
                a = op * np.exp(-0.5 * q)
                if a < _kernels.ALPHA_MIN:
                    continue
                a = min(a, _kernels.ALPHA_MAX)
                color += T * a * col
                T *= 1.0 - a
            rgb[y, x] = color + T * bg
            alpha_out[y, x] = 1.0 - T
    return Image(rgb, alpha_out)
