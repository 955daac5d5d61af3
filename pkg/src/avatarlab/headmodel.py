"""Procedural parametric head: mesh + linear blendshapes + rigid pose.

The head is an anisotropically scaled icosphere with eight hand-placed
action-unit displacement fields and sixteen landmark vertices. It plays the
role of a full parametric face model at desk scale: deterministic, asset-free,
and exactly linear in the expression coefficients.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from .mathutil import euler_deg_to_rotmat, normalize

N_BLENDSHAPES = 8
BLENDSHAPE_NAMES = (
    "jaw_open",
    "smile",
    "eye_close_l",
    "eye_close_r",
    "brow_raise_l",
    "brow_raise_r",
    "pucker",
    "cheek_puff",
)
N_LANDMARKS = 16


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def translated(self, t):
        return Mesh(self.vertices + np.asarray(t, dtype=np.float64), self.triangles)


@dataclass
class ParametricHead:
    base_vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int
    blendshapes: np.ndarray  # (n_b, V, 3) per-vertex displacement fields
    landmark_indices: np.ndarray  # (16,) int, distinct
    eyelid_vertex_mask: np.ndarray  # (V,) bool

    def __post_init__(self):
        V = self.base_vertices.shape[0]
        if self.triangles.min() < 0 or self.triangles.max() >= V:
            raise ValueError("triangles index out-of-range vertices")
        if self.blendshapes.shape != (N_BLENDSHAPES, V, 3):
            raise ValueError("blendshapes must hold one delta per vertex per unit")
        if len(set(self.landmark_indices.tolist())) != len(self.landmark_indices):
            raise ValueError("landmark indices must be distinct")

    @property
    def n_vertices(self):
        return self.base_vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


@dataclass
class Expression:
    """Expression coefficients in [0, 1] plus a rigid head pose (Euler degrees)."""

    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(N_BLENDSHAPES))
    pose: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.coefficients = np.clip(
            np.asarray(self.coefficients, dtype=np.float64), 0.0, 1.0
        )
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.coefficients.shape != (N_BLENDSHAPES,):
            raise ValueError(f"expected {N_BLENDSHAPES} coefficients")

    @staticmethod
    def unit(index, amplitude=1.0, pose=(0.0, 0.0, 0.0)):
        c = np.zeros(N_BLENDSHAPES)
        c[index] = amplitude
        return Expression(c, np.asarray(pose, dtype=np.float64))


@dataclass(frozen=True)
class CameraPose:
    """Look-at camera targeting the head center.

    Azimuth 90 degrees is directly frontal; elevation is measured up from the
    horizontal plane. fovy is the vertical field of view in degrees.
    """

    distance: float
    fovy: float
    elevation: float
    azimuth: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("camera distance must be positive")
        if not 0 < self.fovy < 180:
            raise ValueError("fovy must be in (0, 180) degrees")

    @property
    def position(self):
        a = np.deg2rad(self.azimuth)
        e = np.deg2rad(self.elevation)
        return self.distance * np.array(
            [np.cos(e) * np.cos(a), np.sin(e), np.cos(e) * np.sin(a)]
        )

    def rotation_w2c(self):
        """World-to-camera rotation; rows are (right, up, forward). Depth = forward."""
        fwd = normalize(-self.position)
        up = np.array([0.0, 1.0, 0.0])
        right = normalize(np.cross(fwd, up))
        up2 = np.cross(right, fwd)
        return np.stack([right, up2, fwd], axis=0)

    def intrinsics(self, width, height):
        f = height / (2.0 * np.tan(np.deg2rad(self.fovy) / 2.0))
        cx = (width - 1) / 2.0
        cy = (height - 1) / 2.0
        return f, cx, cy


def _icosphere(subdiv):
    """Unit icosphere by repeated edge-midpoint subdivision of an icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts = normalize(verts)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdiv):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (ab, b, bc), (bc, c, ca), (ab, bc, ca)]
        faces = new_faces
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def _falloff(dirs, anchor, radius):
    """Cosine falloff in [0, 1] of the angle between unit dirs and an anchor dir."""
    anchor = normalize(np.asarray(anchor, dtype=np.float64))
    ang = np.arccos(np.clip(dirs @ anchor, -1.0, 1.0))
    t = np.minimum(ang / radius, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


# (anchor direction on the unit sphere, angular radius, displacement builder).
# x is the lateral axis (negative = model left), y up, z the facing direction.
def _blendshape_fields(dirs):
    V = dirs.shape[0]
    fields = np.zeros((N_BLENDSHAPES, V, 3))

    def const(vec):
        return np.broadcast_to(np.asarray(vec, dtype=np.float64), (V, 3))

    smile_dir = np.stack(
        [0.22 * np.tanh(4.0 * dirs[:, 0]), np.full(V, 0.10), np.full(V, 0.04)], axis=1
    )
    specs = [
        ((0.0, -0.75, 0.62), 0.75, const((0.0, -0.40, 0.04))),   # jaw_open
        ((0.0, -0.38, 0.92), 0.65, smile_dir),                   # smile
        ((-0.35, 0.28, 0.89), 0.30, const((0.0, -0.11, 0.0))),   # eye_close_l
        ((0.35, 0.28, 0.89), 0.30, const((0.0, -0.11, 0.0))),    # eye_close_r
        ((-0.35, 0.50, 0.78), 0.32, const((0.0, 0.13, 0.02))),   # brow_raise_l
        ((0.35, 0.50, 0.78), 0.32, const((0.0, 0.13, 0.02))),    # brow_raise_r
        ((0.0, -0.38, 0.92), 0.45, const((0.0, 0.0, 0.20))),     # pucker
        ((0.0, -0.25, 0.95), 0.80, 0.16 * dirs),                 # cheek_puff
    ]
    for b, (anchor, radius, direction) in enumerate(specs):
        w = _falloff(dirs, anchor, radius)
        fields[b] = w[:, None] * direction
    return fields


_LANDMARK_ANCHORS = [
    # 4 eye (upper/lower lid, left then right)
    (-0.35, 0.34, 0.87), (-0.35, 0.21, 0.90),
    (0.35, 0.34, 0.87), (0.35, 0.21, 0.90),
    # 8 mouth ring
    (-0.22, -0.38, 0.90), (-0.14, -0.29, 0.94), (0.0, -0.26, 0.96), (0.14, -0.29, 0.94),
    (0.22, -0.38, 0.90), (0.14, -0.48, 0.87), (0.0, -0.51, 0.86), (-0.14, -0.48, 0.87),
    # 1 nose
    (0.0, 0.02, 1.0),
    # 3 jaw
    (-0.40, -0.70, 0.58), (0.0, -0.84, 0.50), (0.40, -0.70, 0.58),
]


def _landmark_indices(dirs):
    taken = set()
    idx = []
    for anchor in _LANDMARK_ANCHORS:
        order = np.argsort(-(dirs @ normalize(np.asarray(anchor, dtype=np.float64))))
        for i in order:
            if int(i) not in taken:
                taken.add(int(i))
                idx.append(int(i))
                break
    return np.asarray(idx, dtype=np.int64)


DEFAULT_HEAD_RADIUS = 2.8  # sized so the head fills a portrait at distance ~8-11


def build_head(subdiv=3, proportions=(1.0, 1.3, 1.1), radius=DEFAULT_HEAD_RADIUS):
    """Construct the default procedural head (1280 triangles at subdiv 3)."""
    unit_verts, faces = _icosphere(subdiv)
    dirs = unit_verts  # unit directions, used for anchors/falloffs
    base = unit_verts * (radius * np.asarray(proportions, dtype=np.float64))
    fields = radius * _blendshape_fields(dirs)
    lm = _landmark_indices(dirs)
    eye_support = np.abs(fields[2]).sum(axis=1) + np.abs(fields[3]).sum(axis=1)
    eyelid_mask = eye_support > 1e-9
    return ParametricHead(
        base_vertices=base,
        triangles=faces,
        blendshapes=fields,
        landmark_indices=lm,
        eyelid_vertex_mask=eyelid_mask,
    )


def deform_mesh(head: ParametricHead, expr: Expression) -> Mesh:
    """Blendshape deformation followed by the rigid head-pose rotation.

    vertices = R_pose @ (base + sum_b e_b * blendshape_b); exactly linear in e
    at fixed pose.
    """
    v = head.base_vertices + np.tensordot(expr.coefficients, head.blendshapes, axes=1)
    R = euler_deg_to_rotmat(expr.pose)
    return Mesh((v @ R.T), head.triangles)


def project(camera: CameraPose, points, width, height):
    """Pinhole projection of world points.

    Returns (uv, depth, visible): pixel coordinates (N, 2), camera-space depth
    along the view axis (N,), and a visibility flag that is False for points
    at or behind the camera plane.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    W = camera.rotation_w2c()
    t = (pts - camera.position) @ W.T
    f, cx, cy = camera.intrinsics(width, height)
    depth = t[:, 2]
    visible = depth > 1e-8
    safe = np.where(visible, depth, 1.0)
    u = cx + f * t[:, 0] / safe
    v = cy - f * t[:, 1] / safe
    return np.stack([u, v], axis=1), depth, visible


def landmark_colors():
    """16 distinct fixed RGB colors, one per landmark id."""
    return np.array(
        [colorsys.hsv_to_rgb(i / N_LANDMARKS, 1.0, 1.0) for i in range(N_LANDMARKS)]
    )


def landmark_map(head: ParametricHead, expr: Expression, camera: CameraPose, width, height):
    """Rasterize the 16 landmark vertices as fixed-radius colored discs.

    Deterministic; landmarks behind the camera are simply absent. Returns an
    (H, W, 3) float image in [0, 1] on a black background.
    """
    if width < 16 or height < 16:
        raise ValueError("landmark map resolution must be at least 16x16")
    mesh = deform_mesh(head, expr)
    pts = mesh.vertices[head.landmark_indices]
    uv, depth, visible = project(camera, pts, width, height)
    radius = max(2.0 * min(width, height) / 512.0, 0.75)
    img = np.zeros((height, width, 3))
    colors = landmark_colors()
    order = np.argsort(-depth)  # draw far first so nearer discs win overlaps
    ys, xs = np.mgrid[0:height, 0:width]
    for i in order:
        if not visible[i]:
            continue
        u, v = uv[i]
        mask = (xs - u) ** 2 + (ys - v) ** 2 <= radius**2
        img[mask] = colors[i]
    return img
