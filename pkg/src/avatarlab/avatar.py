"""Learnable 3D Gaussians bound to mesh triangles in local triangle frames.

Each Gaussian stores its parameters relative to the frame of its triangle
(origin = centroid, x-axis along the first edge, z-axis along the normal,
scale = mean edge length), so the cloud deforms rigidly with the mesh and the
position/scale regularizers act in scale-free units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .headmodel import Mesh, ParametricHead
from .mathutil import (
    inverse_sigmoid,
    quat_conjugate,
    quat_multiply,
    quat_to_rotmat,
    rotmats_to_quats,
    sigmoid,
)

log = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814  # DC spherical-harmonic basis constant (viewer convention)

PARAM_GROUPS = ("mu_local", "rot_local", "log_scale_local", "opacity_logit", "color")


@dataclass
class GaussianAvatar:
    triangle_id: np.ndarray  # (N,) int
    mu_local: np.ndarray  # (N, 3) offsets in triangle frames, triangle-scale units
    rot_local: np.ndarray  # (N, 4) quaternions (renormalized after optimizer steps)
    log_scale_local: np.ndarray  # (N, 3) log-scales in triangle-scale units
    opacity_logit: np.ndarray  # (N,)
    color: np.ndarray  # (N, 3) RGB in [0, 1]

    @property
    def n_gaussians(self):
        return self.triangle_id.shape[0]

    def params(self):
        return {g: getattr(self, g) for g in PARAM_GROUPS}

    def copy(self):
        return GaussianAvatar(
            self.triangle_id.copy(), self.mu_local.copy(), self.rot_local.copy(),
            self.log_scale_local.copy(), self.opacity_logit.copy(), self.color.copy(),
        )


@dataclass
class WorldGaussians:
    """World-space Gaussians as consumed by the renderer."""

    means: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4), may be unnormalized; renderer normalizes
    log_scales: np.ndarray  # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)

    @property
    def n_gaussians(self):
        return self.means.shape[0]

    def covariances(self):
        R = quat_to_rotmat(self.quats)
        s2 = np.exp(2.0 * self.log_scales)
        return np.einsum("nij,nj,nkj->nik", R, s2, R)


def triangle_frames(mesh: Mesh, previous=None):
    """Per-triangle frames: (origins (T,3), rotations (T,3,3), scales (T,)).

    Degenerate (zero-area) triangles fall back to the previous frames when
    provided, and are logged.
    """
    v = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    origins = v.mean(axis=1)
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    n = np.cross(e1, e2)
    n_norm = np.linalg.norm(n, axis=1)
    e1_norm = np.linalg.norm(e1, axis=1)
    degenerate = (n_norm < 1e-14) | (e1_norm < 1e-14)
    if degenerate.any():
        if previous is None:
            raise ValueError("degenerate triangle with no previous frame to fall back on")
        log.warning("%d degenerate triangles; reusing previous frames", degenerate.sum())
    safe_n = np.where(degenerate[:, None], [0.0, 0.0, 1.0], n)
    safe_e1 = np.where(degenerate[:, None], [1.0, 0.0, 0.0], e1)
    z = safe_n / np.linalg.norm(safe_n, axis=1, keepdims=True)
    x = safe_e1 / np.linalg.norm(safe_e1, axis=1, keepdims=True)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=2)  # columns are the frame axes
    edges = np.stack(
        [e1_norm, np.linalg.norm(v[:, 2] - v[:, 1], axis=1), np.linalg.norm(e2, axis=1)], axis=1
    )
    scale = edges.mean(axis=1)
    if degenerate.any():
        po, pR, ps = previous
        origins = np.where(degenerate[:, None], po, origins)
        R = np.where(degenerate[:, None, None], pR, R)
        scale = np.where(degenerate, ps, scale)
    return origins, R, scale


def _triangle_pattern(count):
    """Fixed low-discrepancy barycentric pattern shared by all triangles."""
    i = np.arange(count)
    # Kronecker (golden-ratio) sequence mapped to the triangle by the sqrt trick
    g = 1.32471795724474602596  # plastic number; 2D low-discrepancy generator
    r1 = np.mod(0.5 + i / g, 1.0)
    r2 = np.mod(0.5 + i / g**2, 1.0)
    s = np.sqrt(r1)
    w0 = 1.0 - s
    w1 = s * (1.0 - r2)
    w2 = s * r2
    return np.stack([w0, w1, w2], axis=1)  # (count, 3), inside the triangle


def init_avatar(
    head: ParametricHead,
    gaussians_per_triangle=2,
    eyelid_opacity=0.9,
    base_opacity=0.1,
    init_scale=0.35,
):
    """Evenly seed each triangle with Gaussians on its plane.

    Triangles supporting the eye-close units start near-opaque so eye closure
    does not punch holes; everything else starts faint, as is usual for splat
    fitting.
    """
    if gaussians_per_triangle < 1:
        raise ValueError("gaussians_per_triangle must be >= 1")
    T = head.n_triangles
    N = T * gaussians_per_triangle
    tri_id = np.repeat(np.arange(T), gaussians_per_triangle)
    bary = np.tile(_triangle_pattern(gaussians_per_triangle), (T, 1))

    base_mesh = Mesh(head.base_vertices, head.triangles)
    origins, R, scale = triangle_frames(base_mesh)
    v = head.base_vertices[head.triangles]  # (T, 3, 3)
    world_pos = np.einsum("nk,nkj->nj", bary, v[tri_id])
    mu_local = np.einsum("nji,nj->ni", R[tri_id], world_pos - origins[tri_id]) / scale[
        tri_id, None
    ]

    eyelid_tri = head.eyelid_vertex_mask[head.triangles].any(axis=1)
    opacity = np.where(eyelid_tri[tri_id], eyelid_opacity, base_opacity)

    return GaussianAvatar(
        triangle_id=tri_id,
        mu_local=mu_local,
        rot_local=np.tile([1.0, 0.0, 0.0, 0.0], (N, 1)),
        log_scale_local=np.full((N, 3), np.log(init_scale)),
        opacity_logit=inverse_sigmoid(np.clip(opacity, 1e-6, 1 - 1e-6)),
        color=np.full((N, 3), 0.5),
    )


def frame_quantities(mesh: Mesh, previous=None):
    """Triangle-frame tensors used by the deform forward/backward passes.

    A pure function of the mesh, so callers may compute this once per
    expression and reuse it across iterations while the avatar trains.
    """
    if previous is not None and isinstance(previous, dict):
        previous = (previous["origins"], previous["R"], previous["scale"])
    origins, R, scale = triangle_frames(mesh, previous=previous)
    return {
        "origins": origins,
        "R": R,
        "scale": scale,
        "log_scale": np.log(scale),
        "quats": rotmats_to_quats(R),
    }


def deform_gaussians(avatar: GaussianAvatar, mesh: Mesh = None, previous_frames=None,
                     frames=None):
    """Carry local Gaussians into world space through their triangle frames.

    mean = origin + scale * R_frame @ mu_local; world rotation composes the
    frame rotation with the local quaternion; world scales multiply by the
    frame scale. Pure function of (avatar, mesh); pass precomputed `frames`
    from `frame_quantities` to skip recomputing them.
    """
    if frames is None:
        frames = frame_quantities(mesh, previous=previous_frames)
    tid = avatar.triangle_id
    Rg = frames["R"][tid]
    means = frames["origins"][tid] + frames["scale"][tid, None] * np.einsum(
        "nij,nj->ni", Rg, avatar.mu_local
    )
    quats = quat_multiply(frames["quats"][tid], avatar.rot_local)
    log_scales = frames["log_scale"][tid, None] + avatar.log_scale_local
    return WorldGaussians(
        means=means,
        quats=quats,
        log_scales=log_scales,
        opacity_logits=avatar.opacity_logit.copy(),
        colors=avatar.color.copy(),
    ), frames


def deform_backward(avatar: GaussianAvatar, frames, world_grads):
    """Map world-space parameter gradients back onto the local learnables.

    `frames` is the dict returned by `frame_quantities`/`deform_gaussians`;
    `world_grads` is a dict with keys means/quats/log_scales/opacity_logits/
    colors matching WorldGaussians; returns a dict keyed by PARAM_GROUPS.
    """
    tid = avatar.triangle_id
    Rg = frames["R"][tid]
    # mean = o + s R mu  =>  grad_mu = s R^T grad_mean
    g_mu = frames["scale"][tid, None] * np.einsum("nij,ni->nj", Rg, world_grads["means"])
    # q_world = q_frame ⊗ q_local  =>  grad_q_local = conj(q_frame) ⊗ grad_q_world
    g_rot = quat_multiply(quat_conjugate(frames["quats"][tid]), world_grads["quats"])
    return {
        "mu_local": g_mu,
        "rot_local": g_rot,
        "log_scale_local": world_grads["log_scales"].copy(),
        "opacity_logit": world_grads["opacity_logits"].copy(),
        "color": world_grads["colors"].copy(),
    }


_PLY_FIELDS = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def export_ply(world: WorldGaussians, path, dtype="f8"):
    """Write world-space Gaussians as binary little-endian PLY.

    Attribute naming follows the splat-viewer convention (f_dc colors,
    pre-activation opacity and log scales). dtype 'f8' round-trips the
    in-memory state bit-exactly; 'f4' matches what most viewers expect.
    """
    if dtype not in ("f4", "f8"):
        raise ValueError("dtype must be 'f4' or 'f8'")
    ply_type = {"f4": "float", "f8": "double"}[dtype]
    N = world.n_gaussians
    rows = np.zeros((N, len(_PLY_FIELDS)))
    if N:
        rows[:, 0:3] = world.means
        rows[:, 6:9] = (world.colors - 0.5) / SH_C0
        rows[:, 9] = world.opacity_logits
        rows[:, 10:13] = world.log_scales
        rows[:, 13:17] = world.quats
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {N}"]
        + [f"property {ply_type} {name}" for name in _PLY_FIELDS]
        + ["end_header", ""]
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rows.astype(f"<{dtype}").tobytes())
    except OSError as exc:
        raise OSError(f"failed to write PLY to {path}: {exc}") from exc


def import_ply(path):
    """Read a PLY written by export_ply back into WorldGaussians."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    n = None
    props = []
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("property"):
            _, ptype, name = line.split()
            props.append((name, ptype))
    if n is None or [p[0] for p in props] != _PLY_FIELDS:
        raise ValueError(f"unexpected PLY layout in {path}")
    np_type = {"float": "<f4", "double": "<f8"}[props[0][1]]
    rows = np.frombuffer(data[end:], dtype=np_type).reshape(n, len(_PLY_FIELDS)).astype(np.float64)
    return WorldGaussians(
        means=rows[:, 0:3].copy(),
        quats=rows[:, 13:17].copy(),
        log_scales=rows[:, 10:13].copy(),
        opacity_logits=rows[:, 9].copy(),
        colors=rows[:, 6:9] * SH_C0 + 0.5,
    )


def renormalize_quaternions(avatar: GaussianAvatar):
    """Restore unit-norm local quaternions (called after every optimizer step)."""
    norms = np.linalg.norm(avatar.rot_local, axis=1, keepdims=True)
    avatar.rot_local = avatar.rot_local / np.maximum(norms, 1e-12)


def opacities(avatar_or_world):
    logits = getattr(avatar_or_world, "opacity_logit", None)
    if logits is None:
        logits = avatar_or_world.opacity_logits
    return sigmoid(logits)
