"""Controllable synthetic video generator holding hidden ground truth.

Stands in for a portrait video generator: it renders a hidden textured head,
corrupts the output in proportion to view/expression difficulty, and attenuates
that corruption when given good avatar renders (texture guidance) and landmark
maps (geometry guidance). Deterministic given (world seed, sample seed,
request).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import zoom

from .avatar import GaussianAvatar, deform_gaussians, init_avatar
from .headmodel import CameraPose, Expression, ParametricHead, build_head, deform_mesh, project
from .mathutil import inverse_sigmoid, normalize
from .render import render


@dataclass
class CorruptionModel:
    sigma_pose: float = 18.0  # degrees of camera jitter at full corruption
    sigma_expr: float = 1.2  # expression-coefficient jitter
    sigma_pixel: float = 0.25  # smooth pixel-noise amplitude
    w_view: float = 1.0
    w_expr: float = 1.0
    tau: float = 2.5e-3  # guidance MSE scale mapping render quality to [0, 1]
    gamma_lm: float = 0.5  # geometric-jitter reduction when landmarks are given

    def __post_init__(self):
        if min(self.sigma_pose, self.sigma_expr, self.sigma_pixel) < 0:
            raise ValueError("corruption sigmas must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 <= self.gamma_lm <= 1:
            raise ValueError("gamma_lm must lie in [0, 1]")


@dataclass
class OracleWorld:
    gt_head: ParametricHead
    gt_avatar: GaussianAvatar  # fixed textured Gaussians on the hidden head
    gt_texture: np.ndarray  # (V, 3) per-vertex identity colors
    corruption: CorruptionModel
    seed: int


@dataclass
class GuidedRequest:
    cameras: list
    expressions: list
    guidance_frames: Optional[np.ndarray] = None  # (F, H, W, 3) avatar renders
    landmark_frames: Optional[np.ndarray] = None  # (F, H, W, 3) landmark maps
    sample_seed: int = 0

    def __post_init__(self):
        if len(self.cameras) != len(self.expressions):
            raise ValueError("camera and expression sequences must have equal length")

    def __len__(self):
        return len(self.cameras)


def _band_texture(dirs, rng):
    """Seeded multi-band color pattern with distinct eye and mouth colors."""
    n = dirs.shape[0]
    palette = rng.uniform(0.1, 0.9, size=(6, 3))
    band = np.clip(((dirs[:, 1] + 1.0) / 2.0 * 6).astype(int), 0, 5)
    colors = palette[band]
    freq = rng.uniform(3.0, 6.0)
    phase = rng.uniform(0, 2 * np.pi)
    stripe = 0.5 + 0.5 * np.sin(freq * np.arctan2(dirs[:, 0], dirs[:, 2]) + phase)
    colors = 0.8 * colors + 0.2 * stripe[:, None] * rng.uniform(0.2, 1.0, size=3)

    eye_color = rng.uniform(0, 0.25, size=3)  # dark, identity-specific
    mouth_color = np.array([0.75, 0.15, 0.2]) + rng.uniform(-0.1, 0.1, size=3)
    for anchor, radius, col in [
        ((-0.35, 0.27, 0.89), 0.18, eye_color),
        ((0.35, 0.27, 0.89), 0.18, eye_color),
        ((0.0, -0.38, 0.92), 0.22, mouth_color),
    ]:
        ang = np.arccos(np.clip(dirs @ normalize(np.asarray(anchor, dtype=np.float64)), -1, 1))
        colors[ang < radius] = np.clip(col, 0, 1)
    return np.clip(colors, 0.0, 1.0)


def build_oracle_world(seed, subdiv=3, proportions=(1.0, 1.3, 1.1),
                       gaussians_per_triangle=2, corruption=None):
    """Hidden ground truth: the procedural head carrying a seeded texture."""
    rng = np.random.default_rng([0x0A11CE, seed])
    head = build_head(subdiv, proportions)
    avatar = init_avatar(head, gaussians_per_triangle)
    base_mesh_dirs = normalize(head.base_vertices / np.asarray(proportions))
    texture = _band_texture(base_mesh_dirs, rng)

    # color each Gaussian by the texture at its on-surface direction
    world, _ = deform_gaussians(avatar, _base_mesh(head))
    gdirs = normalize(world.means / np.asarray(proportions))
    avatar.color = _band_texture(gdirs, np.random.default_rng([0x0A11CE, seed]))
    avatar.opacity_logit = np.full(avatar.n_gaussians, inverse_sigmoid(0.98))
    avatar.log_scale_local = np.full((avatar.n_gaussians, 3), np.log(0.45))
    return OracleWorld(
        gt_head=head,
        gt_avatar=avatar,
        gt_texture=texture,
        corruption=corruption or CorruptionModel(),
        seed=seed,
    )


def _base_mesh(head):
    from .headmodel import Mesh

    return Mesh(head.base_vertices, head.triangles)


def difficulty(corruption: CorruptionModel, camera: CameraPose, expr: Expression):
    """View/expression difficulty: 0 for a frontal camera and neutral face."""
    view = abs(camera.azimuth - 90.0) / 90.0
    amp = float(expr.coefficients.max()) if expr.coefficients.size else 0.0
    return corruption.w_view * view + corruption.w_expr * amp


def gt_render(world: OracleWorld, camera: CameraPose, expr: Expression, width, height,
              background=None):
    """Render the hidden ground-truth head; (H, W, 3) rgb."""
    mesh = deform_mesh(world.gt_head, expr)
    gs, _ = deform_gaussians(world.gt_avatar, mesh)
    return render(gs, camera, width, height, background).rgb


def gt_landmarks(world: OracleWorld, camera: CameraPose, expr: Expression, width, height):
    mesh = deform_mesh(world.gt_head, expr)
    pts = mesh.vertices[world.gt_head.landmark_indices]
    uv, _, vis = project(camera, pts, width, height)
    return uv, vis


def _smooth_noise(rng, height, width):
    coarse = rng.normal(size=(8, 8, 3))
    fieldn = zoom(coarse, (height / 8, width / 8, 1), order=1)
    return fieldn / (fieldn.std() + 1e-12)


def generate(world: OracleWorld, request: GuidedRequest, width, height,
             return_info=False, background=None):
    """Produce a corrupted/refined video for the requested (P, E) sequence.

    Per frame: guidance quality g = clamp(1 - MSE(guidance, GT render)/tau, 0, 1);
    geometric jitter and pixel noise shrink with g, with difficulty, and (for
    the jitter) with landmark guidance. Same seeds + same guidance => identical
    output.
    """
    corr = world.corruption
    F = len(request)
    if request.guidance_frames is not None:
        gshape = np.asarray(request.guidance_frames).shape
        if gshape != (F, height, width, 3):
            raise ValueError(
                f"guidance frames shape {gshape} does not match request "
                f"({F}, {height}, {width}, 3)"
            )
    lm_present = request.landmark_frames is not None

    frames = np.empty((F, height, width, 3))
    info = {"g": [], "difficulty": [], "jittered_cameras": [], "jittered_expressions": [],
            "gt_landmarks": [], "out_landmarks": []}
    for i in range(F):
        cam, expr = request.cameras[i], request.expressions[i]
        clean = gt_render(world, cam, expr, width, height, background)
        if request.guidance_frames is not None:
            mse = float(np.mean((request.guidance_frames[i] - clean) ** 2))
            g = float(np.clip(1.0 - mse / corr.tau, 0.0, 1.0))
        else:
            g = 0.0
        diff = difficulty(corr, cam, expr)
        jitter_scale = (1.0 - g) * (1.0 - corr.gamma_lm * lm_present) * diff
        noise_scale = (1.0 - g) * diff * corr.sigma_pixel

        rng = np.random.default_rng([abs(world.seed), abs(request.sample_seed), i])
        d_expr = rng.normal(size=expr.coefficients.shape) * corr.sigma_expr
        d_cam = rng.normal(size=2) * corr.sigma_pose
        noise = _smooth_noise(rng, height, width)

        if jitter_scale == 0.0 and noise_scale == 0.0:
            out = clean
            cam_j, expr_j = cam, expr
        else:
            expr_j = Expression(
                np.clip(expr.coefficients + jitter_scale * d_expr, 0.0, 1.0), expr.pose
            )
            cam_j = CameraPose(
                cam.distance, cam.fovy,
                cam.elevation + jitter_scale * d_cam[0],
                cam.azimuth + jitter_scale * d_cam[1],
            )
            out = gt_render(world, cam_j, expr_j, width, height, background)
            out = np.clip(out + noise_scale * noise, 0.0, 1.0)
        frames[i] = out
        if return_info:
            info["g"].append(g)
            info["difficulty"].append(diff)
            info["jittered_cameras"].append(cam_j)
            info["jittered_expressions"].append(expr_j)
            info["gt_landmarks"].append(gt_landmarks(world, cam, expr, width, height)[0])
            info["out_landmarks"].append(gt_landmarks(world, cam_j, expr_j, width, height)[0])
    if return_info:
        return frames, info
    return frames
